import json
import subprocess
import sys
from pathlib import Path

import pytest

from bidselect.cli import main

REPORT_FIELDS = {
    "accuracy",
    "delta_realistic",
    "classified_fraction",
    "mean_gap_chosen",
    "mean_gap_optimal",
    "decisions",
    "bootstrap",
    "baselines",
}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "syn"), "--n-days", "250", "--seed", "4"]) == 0
    return root / "syn"


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(Path(path).rglob("*")) if p.is_file()}


def _commands(data, out):
    days, curves = str(data / "days.csv"), str(data / "curves.csv")
    tune = str(out / "tune")
    model = str(out / "train" / "model.json")
    return [
        ["synth", "--out", str(out / "synth"), "--n-days", "120", "--seed", "2"],
        ["featurize", "--out", str(out / "feat"), "--days", days, "--curves", curves, "--features", "complex",
         "--scaling", "rolling365"],
        ["tune", "--out", tune, "--days", days, "--iters", "4", "--folds", "3"],
        ["train", "--out", str(out / "train"), "--days", days, "--params", tune + "/tune.json"],
        ["gains", "--out", str(out / "gains"), "--days", days, "--params", tune + "/tune.json"],
        ["explain", "--out", str(out / "explain"), "--days", days, "--model-file", model, "--rows", "4"],
        ["evaluate", "--out", str(out / "eval"), "--days", days, "--model-file", model, "--bootstrap", "10"],
        ["backtest", "--out", str(out / "bt"), "--days", days, "--iters", "4", "--folds", "3", "--bootstrap", "10"],
    ]


def run_all(data, out):
    for argv in _commands(data, out):
        assert main(argv) == 0, argv
    return _tree(out)


def test_every_subcommand_is_byte_deterministic(data, tmp_path):
    a = run_all(data, tmp_path / "a")
    b = run_all(data, tmp_path / "b")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_backtest_report_fields(data, tmp_path):
    out = tmp_path / "bt"
    main(["backtest", "--out", str(out), "--days", str(data / "days.csv"), "--iters", "3", "--folds", "3",
          "--bootstrap", "10"])
    report = json.loads((out / "report.json").read_text())
    assert REPORT_FIELDS <= report.keys()
    assert set(report["baselines"]) == {"always_stochastic", "always_deterministic", "binomial"}
    assert report["provenance"]["seed"] == 0
    audit = json.loads((out / "index_audit.json").read_text())
    assert audit["test_rows"] == len(report["decisions"])
    assert not set(audit["train_value_dates"]) & set(audit["test_value_dates"])
    gains_dates = audit["steps"]["gains"]["fit_value_dates"] + audit["steps"]["gains"]["validation_value_dates"]
    assert set(gains_dates) <= set(audit["train_value_dates"])
    assert audit["tuning_gains_rows_in_test"] == 0
    manifest = json.loads((out / "manifest.json").read_text())
    model = json.loads((out / "model.json").read_text())
    assert manifest["selected_features"] == audit["selected_features"]
    assert manifest["accuracy"] == report["accuracy"]
    assert set(manifest["artifacts"]) >= {"report.json", "model.json", "decisions.csv"}
    assert model["feature_names"] == manifest["selected_features"]


def test_outputs_carry_provenance_comment(data, tmp_path):
    out = tmp_path / "tr"
    main(["train", "--out", str(out), "--days", str(data / "days.csv"), "--iters", "2"])
    first = (out / "importance.csv").read_text().splitlines()[0]
    assert first.startswith("# config_hash=") and "seed=0" in first


def test_year_split_errors(data, tmp_path, capsys):
    days = str(data / "days.csv")
    assert main(["train", "--out", str(tmp_path), "--days", days, "--split", "years:2016/2016"]) == 2
    assert main(["train", "--out", str(tmp_path), "--days", days, "--split", "years:2016/2017"]) == 2
    errs = [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    assert [e["error"] for e in errs] == ["ValidationError", "ValidationError"]


def test_mlp_train_writes_curve(data, tmp_path):
    out = tmp_path / "mlp"
    rc = main(["train", "--out", str(out), "--days", str(data / "days.csv"), "--model", "mlp", "--epochs", "5"])
    assert rc == 0
    assert (out / "overfit.json").exists()
    assert len((out / "training_curve.csv").read_text().splitlines()) == 2 + 5


def test_column_mismatch_exits_2_with_json(data, tmp_path):
    model_dir = tmp_path / "m"
    main(["train", "--out", str(model_dir), "--days", str(data / "days.csv")])
    proc = subprocess.run(
        [sys.executable, "-m", "bidselect", "evaluate", "--out", str(tmp_path / "e"), "--days",
         str(data / "days.csv"), "--curves", str(data / "curves.csv"), "--features", "complex",
         "--model-file", str(model_dir / "model.json")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"] == "ColumnMismatchError"
    assert "8" in err["message"]


def test_bad_arguments_exit_nonzero(data, tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--days", str(data / "days.csv"), "--split", "nonsense"]) == 2
    assert main(["train", "--out", str(tmp_path), "--days", str(tmp_path / "missing.csv")]) == 2
    err = capsys.readouterr().err
    assert '"error"' in err


def test_policy_must_fit_model(data, tmp_path):
    rc = main(["backtest", "--out", str(tmp_path), "--days", str(data / "days.csv"), "--model", "gbdt_regress",
               "--policy", "threshold:0.5"])
    assert rc == 2
