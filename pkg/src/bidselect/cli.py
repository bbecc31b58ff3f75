"""Command-line interface: ``bidselect <subcommand> [flags]``.

Every artifact carries the hash of the run configuration and the seed: CSV
files as a leading ``#`` comment, JSON files under a ``provenance`` key.
Errors are reported as one JSON object on stderr with exit code 2
(validation) or 3 (runtime).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import curves as curves_mod
from . import dataset, explain, features, gbdt, mlp, policy, synth, tuning
from .errors import BidSelectError, ColumnMismatchError, ValidationError

log = logging.getLogger("bidselect")

MODEL_KINDS = ("gbdt_classify", "gbdt_regress", "mlp")
SCALING_FLAGS = {"none": None, "per-year": "per_year", "rolling365": "rolling_365", "global": "global"}
EXCLUDED_FROM_HASH = ("out", "func")
INPUT_FILES = ("days", "curves", "params", "model_file")


# -- provenance --------------------------------------------------------------


class Provenance:
    def __init__(self, args):
        self.config = {k: _identify(k, v) for k, v in sorted(vars(args).items()) if k not in EXCLUDED_FROM_HASH}
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        self.config_hash = hashlib.sha256(blob).hexdigest()[:16]
        self.seed = args.seed
        self.out = Path(args.out)
        self.written = []

    @property
    def comment(self):
        return f"config_hash={self.config_hash} seed={self.seed}"

    @property
    def stamp(self):
        return {"provenance": {"config": self.config, "config_hash": self.config_hash, "seed": self.seed}}

    def path(self, name):
        self.written.append(name)
        return self.out / name

    def json(self, name, payload):
        payload = {**payload, **self.stamp}
        self.path(name).write_text(json.dumps(payload, indent=1, sort_keys=True, default=_jsonable) + "\n")

    def text(self, name, lines):
        body = "".join(f"{ln}\n" for ln in lines)
        self.path(name).write_text(f"# {self.comment}\n{body}")

    def csv(self, name, header, rows):
        lines = [",".join(header)] + [",".join(_cell(v) for v in r) for r in rows]
        self.text(name, lines)


def _file_id(path):
    # content, not location, so a rerun elsewhere yields identical files
    path = Path(path)
    return {"file": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def _identify(key, value):
    if value is None:
        return value
    if key in INPUT_FILES:
        return _file_id(value)
    if key == "features" and str(value).startswith("custom:"):
        return _file_id(value[len("custom:"):])
    return value


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# -- flag parsing ------------------------------------------------------------


def parse_split(text, seed):
    kind, _, rest = text.partition(":")
    try:
        if kind == "random":
            return dataset.SplitPlan("random", float(rest or 0.67), seed)
        if kind == "years":
            train, _, test = rest.partition("/")
            years = lambda s: tuple(int(y) for y in s.split(",") if y)
            return dataset.SplitPlan("sequential", seed=seed, train_years=years(train), test_years=years(test))
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad --split {text!r}: {exc}", field="split") from None
    raise ValidationError(f"bad --split {text!r}; use random:<frac> or years:<train>/<test>", field="split")


def parse_policy(text, model_kind):
    if text is None:
        return policy.DecisionPolicy.threshold(0.5) if model_kind == "gbdt_classify" else policy.DecisionPolicy.sign()
    kind, _, rest = text.partition(":")
    try:
        if kind == "threshold":
            return policy.DecisionPolicy.threshold(float(rest or 0.5))
        if kind == "band":
            lo, hi = (float(x) for x in rest.split(","))
            return policy.DecisionPolicy.band(lo, hi)
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad --policy {text!r}: {exc}", field="policy") from None
    if kind == "sign":
        return policy.DecisionPolicy.sign()
    raise ValidationError(f"bad --policy {text!r}; use threshold:<x>, band:<lo>,<hi> or sign", field="policy")


def _check_policy(pol, model_kind):
    probabilistic = model_kind == "gbdt_classify"
    if probabilistic == (pol.kind == "regression_sign"):
        raise ValidationError(
            f"policy {pol.kind} does not fit model {model_kind}", field="policy"
        )


# -- data preparation --------------------------------------------------------


def _existing(path, flag):
    if path is None:
        raise ValidationError(f"{flag} is required", field=flag.lstrip("-"))
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{flag} file not found: {path}", field=flag.lstrip("-"))
    return p


def build_matrix(args):
    """Feature matrix for the ``--features`` choice, scaled per ``--scaling``."""
    records = dataset.load_records(_existing(args.days, "--days"))
    if not records:
        raise ValidationError("days file holds no records", field="days")
    days = dataset.label_days(records)
    choice = args.features
    names = None
    if choice.startswith("custom:"):
        names = list(features.FeatureSpec.from_file(_existing(choice[7:], "--features custom")).names)
        kind = "simple" if set(names) <= set(features.SIMPLE_FEATURES) else "complex"
    elif choice in ("simple", "complex"):
        kind = choice
    else:
        raise ValidationError(f"bad --features {choice!r}", field="features")
    if kind == "simple":
        matrix = features.build_simple(days)
    else:
        curves = curves_mod.load_curves(_existing(args.curves, "--curves"))
        matrix = features.build_complex(days, curves_mod.curve_features(curves))
    if names is not None:
        matrix = matrix.select(names)
    return matrix


def prepare(args):
    """Load, featurize, split and scale; returns (train, test, audit)."""
    matrix = build_matrix(args)
    plan = parse_split(args.split, args.seed)
    mode = SCALING_FLAGS[args.scaling]
    stats = None
    # per-year and rolling statistics of a row depend only on its own year or
    # its past, so they are fit on all rows; global statistics use train only
    if mode in ("per_year", "rolling_365"):
        stats = features.fit_scaling(matrix, mode)
        matrix = features.apply_scaling(matrix, stats)
    tr_idx, te_idx = dataset.split_indices(matrix.value_dates, plan)
    train, test = matrix.take(tr_idx), matrix.take(te_idx)
    if mode == "global":
        stats = features.fit_scaling(train, mode)
        train, test = features.apply_scaling(train, stats), features.apply_scaling(test, stats)
    audit = {
        "split": plan.to_dict(),
        "train_rows": len(train),
        "test_rows": len(test),
        "train_value_dates": [d.isoformat() for d in train.value_dates],
        "test_value_dates": [d.isoformat() for d in test.value_dates],
        "scaling": None if stats is None else {"mode": stats.mode, "dropped": stats.dropped},
    }
    if set(audit["train_value_dates"]) & set(audit["test_value_dates"]):
        raise BidSelectError("train and test rows overlap")
    return train, test, audit


def _objective(model_kind):
    return "binary_logistic" if model_kind == "gbdt_classify" else "squared_error"


def _load_params(path):
    if path is None:
        return None
    data = json.loads(_existing(path, "--params").read_text())
    data = data.get("best_params", data)
    if data is None:
        raise ValidationError("params file holds no successful trial", field="params")
    return gbdt.Hyperparameters.from_dict(data)


# -- models ------------------------------------------------------------------


def fit_model(train, model_kind, params, args):
    if model_kind == "mlp":
        cfg = mlp.MlpConfig(epochs=args.epochs, seed=args.seed)
        if args.mlp_loss == "custom":
            y = np.column_stack([train.beta_det, train.beta_stoch])
        else:
            y = train.strategy_gap
        model, curve = mlp.mlp_fit(train.X, y, cfg, args.mlp_loss)
        return {"kind": "mlp", "model": model, "names": list(train.names), "loss": args.mlp_loss}, curve
    y = train.best if model_kind == "gbdt_classify" else train.strategy_gap
    params = (params or gbdt.Hyperparameters()).replace(seed=args.seed)
    model = gbdt.fit(train.X, y, params, _objective(model_kind), train.names)
    return {"kind": model_kind, "model": model, "names": list(train.names)}, None


def save_model(bundle, prov, name="model.json"):
    extra = {"model_kind": bundle["kind"], **prov.stamp}
    path = prov.path(name)
    if bundle["kind"] == "mlp":
        extra.update(feature_names=bundle["names"], mlp_loss=bundle["loss"])
    bundle["model"].save(path, extra)


def load_model(path):
    data = json.loads(_existing(path, "--model-file").read_text())
    kind = data.get("model_kind")
    if kind == "mlp":
        return {"kind": kind, "model": mlp.MlpModel.from_dict(data), "names": data["feature_names"],
                "loss": data["mlp_loss"]}
    if kind in ("gbdt_classify", "gbdt_regress"):
        model = gbdt.GbdtModel.from_dict(data)
        return {"kind": kind, "model": model, "names": list(model.feature_names)}
    raise ValidationError(f"unknown model kind in {path}", field="model_file")


def model_outputs(bundle, matrix):
    """Probabilities (classifier) or estimated strategy gaps (regressors)."""
    if bundle["kind"] == "mlp":
        if list(matrix.names) != list(bundle["names"]):
            raise ColumnMismatchError(
                f"model expects {len(bundle['names'])} feature columns {bundle['names'][:3]}..., "
                f"got {len(matrix.names)}",
                field="features",
            )
        pred = mlp.predict(bundle["model"], matrix.X)
        if bundle["loss"] == "custom":
            return pred[:, 1] - pred[:, 0]
        return pred[:, 0]
    return gbdt.predict(bundle["model"], matrix)


# -- reports -----------------------------------------------------------------


def evaluation(bundle, train, test, pol, args):
    out = model_outputs(bundle, test)
    report = policy.evaluate(out, test, pol)
    p_train = float(np.mean(train.best == policy.Decision.STOCHASTIC)) if len(train) else None
    report.baselines = policy.baselines(test, p=p_train, seed=args.seed)
    dec = policy.decide_all(out, pol)
    if args.bootstrap:
        mean, std = tuning.bootstrap_eval(dec, test.best, args.bootstrap, args.seed)
        report.bootstrap = {"B": args.bootstrap, "mean": mean, "std": std}
    return report


def write_report(report, pol, prov, name="report.json"):
    prov.json(name, {**report.to_dict(), "policy": pol.to_dict()})
    prov.csv(
        "decisions.csv",
        ["value_date", "output", "decision", "best", "beta_det", "beta_stoch"],
        [[r["value_date"], r["output"], r["decision"], r["best"], r["beta_det"], r["beta_stoch"]]
         for r in report.decisions],
    )


def write_shap(summary, prov):
    prov.json("shap.json", summary.to_dict())
    rows = []
    for i, (xr, cr) in enumerate(zip(summary.values, summary.contributions)):
        for n, x, c in zip(summary.feature_names, xr, cr):
            rows.append([i, n, float(x), float(c)])
    prov.csv("shap.csv", ["row", "feature", "value", "contribution"], rows)


def write_importance(bundle, prov):
    if bundle["kind"] == "mlp":
        return
    imp = gbdt.gain_importance(bundle["model"])
    rows = sorted(imp.items(), key=lambda kv: (-kv[1], bundle["names"].index(kv[0])))
    prov.csv("importance.csv", ["feature", "gain"], [[n, float(g)] for n, g in rows])


def _gains_split(train, seed, fraction):
    """Inner fit/validation split of the training rows for GAINS."""
    n = len(train)
    n_val = max(1, int(round(fraction * n)))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def run_gains(train, params, model_kind, args):
    if model_kind == "mlp":
        raise ValidationError("GAINS applies to tree models only", field="model")
    fit_idx, val_idx = _gains_split(train, args.seed, args.gains_validation)
    trace = explain.gains_loop(
        train.take(fit_idx), train.take(val_idx), (params or gbdt.Hyperparameters()).replace(seed=args.seed),
        _objective(model_kind),
    )
    return trace, fit_idx, val_idx


def write_gains(trace, prov):
    prov.json("gains.json", trace.to_dict())
    prov.csv(
        "gains.csv",
        ["step", "removed", "remaining_count", "accuracy", "delta_realistic"],
        [[i, s.removed or "", len(s.remaining), s.accuracy, s.delta_realistic] for i, s in enumerate(trace.steps)],
    )
    prov.text("selected_features.txt", trace.selected_features)


def run_tune(train, model_kind, args):
    if model_kind == "mlp":
        raise ValidationError("random search tunes tree models only", field="model")
    return tuning.random_search(train, n_iter=args.iters, k=args.folds, objective=_objective(model_kind), seed=args.seed)


def write_tune(result, prov):
    k = len(result.folds)
    running = result.running_best()
    rows = []
    for t, best in zip(result.trials, running):
        p = t.params
        scores = t.fold_scores or [None] * k
        rows.append([t.index, p.learning_rate, p.max_depth, p.n_rounds, p.gamma, p.subsample, *scores, t.mean,
                     best if np.isfinite(best) else None])
    prov.csv(
        "trials.csv",
        ["trial", "learning_rate", "max_depth", "n_rounds", "gamma", "subsample",
         *[f"fold_{i}" for i in range(1, k + 1)], "mean", "running_best"],
        rows,
    )
    best = result.trials[result.best_index] if result.best_index is not None else None
    prov.json("tune.json", {
        "metric": result.metric,
        "best_index": result.best_index,
        "best_params": None if best is None else best.params.to_dict(),
        "best_fold_scores": None if best is None else best.fold_scores,
        "best_mean": None if best is None else best.mean,
        "fold_sizes": [len(f) for f in result.folds],
        "failed_trials": [t.index for t in result.trials if t.mean is None],
    })


# -- subcommands -------------------------------------------------------------


def cmd_synth(args, prov):
    cfg = synth.SynthConfig(
        n_days=args.n_days, seed=args.seed, signal_strength=args.signal_strength, noise_std=args.noise_std,
        stochastic_share=args.stochastic_share, heteroscedasticity=args.heteroscedasticity,
    )
    records, curves, truth = synth.generate(cfg)
    dataset.write_records(records, prov.path("days.csv"), comment=prov.comment)
    curves_mod.write_curves(curves, prov.path("curves.csv"), comment=prov.comment)
    prov.json("ground_truth.json", truth.to_dict())
    prov.csv(
        "gaps.csv",
        ["value_date", "beta_det", "beta_stoch", "strategy_gap", "best"],
        [[d.value_date.isoformat(), d.record.beta_det, d.record.beta_stoch, d.strategy_gap, d.best]
         for d in dataset.label_days(records)],
    )


def cmd_featurize(args, prov):
    matrix = build_matrix(args)
    matrix.to_csv(prov.path("features.csv"), comment=prov.comment)
    mode = SCALING_FLAGS[args.scaling]
    if mode is not None:
        stats = features.fit_scaling(matrix, mode)
        features.apply_scaling(matrix, stats).to_csv(prov.path("features_scaled.csv"), comment=prov.comment)
        stats.save(prov.path("scaling.json"), prov.stamp)
    if args.curves:
        sens = curves_mod.curve_features(curves_mod.load_curves(_existing(args.curves, "--curves")))
        rows = []
        for day, arr in sens.items():
            for h in range(24):
                rows.append([day.isoformat(), h + 1, float(arr[h, 0]), float(arr[h, 1])])
        prov.csv("sensitivities.csv", ["date", "hour", "up", "down"], rows)
        prov.csv(
            "volatility.csv", ["date", "rolling_volatility"],
            [[day.isoformat(), curves_mod.rolling_volatility(arr)] for day, arr in sens.items()],
        )


def cmd_tune(args, prov):
    train, _, audit = prepare(args)
    write_tune(run_tune(train, args.model, args), prov)


def cmd_train(args, prov):
    train, _, _ = prepare(args)
    bundle, curve = fit_model(train, args.model, _load_params(args.params), args)
    save_model(bundle, prov)
    write_importance(bundle, prov)
    if curve is not None:
        curve.write_csv(prov.path("training_curve.csv"), comment=prov.comment)
        prov.json("overfit.json", {"suggested_epoch": mlp.overfit_report(curve), "epochs": len(curve.val_loss)})


def cmd_gains(args, prov):
    train, _, _ = prepare(args)
    trace, _, _ = run_gains(train, _load_params(args.params), args.model, args)
    write_gains(trace, prov)


def cmd_explain(args, prov):
    train, test, _ = prepare(args)
    bundle = load_model(args.model_file)
    if bundle["kind"] == "mlp":
        raise ValidationError("Shapley reports are available for tree models only", field="model_file")
    rows = test.take(np.arange(min(args.rows, len(test))))
    summary = explain.shapley_summary(bundle["model"], rows, explain.default_background(train, seed=args.seed))
    write_shap(summary, prov)


def cmd_evaluate(args, prov):
    train, test, _ = prepare(args)
    bundle = load_model(args.model_file)
    pol = parse_policy(args.policy, bundle["kind"])
    _check_policy(pol, bundle["kind"])
    write_report(evaluation(bundle, train, test, pol, args), pol, prov)


def cmd_backtest(args, prov):
    train, test, audit = prepare(args)
    pol = parse_policy(args.policy, args.model)
    _check_policy(pol, args.model)
    steps = {}
    params = None
    selected = list(train.names)
    if args.model != "mlp":
        result = run_tune(train, args.model, args)
        write_tune(result, prov)
        params = result.best
        steps["tune"] = {"rows": "train", "folds": [len(f) for f in result.folds]}
        if args.skip_gains or len(train.names) < 2:
            steps["gains"] = "skipped"
        else:
            trace, fit_idx, val_idx = run_gains(train, params, args.model, args)
            write_gains(trace, prov)
            selected = trace.selected_features
            steps["gains"] = {
                "fit_value_dates": [train.value_dates[i].isoformat() for i in fit_idx],
                "validation_value_dates": [train.value_dates[i].isoformat() for i in val_idx],
            }
    train_sel, test_sel = train.select(selected), test.select(selected)
    bundle, curve = fit_model(train_sel, args.model, params, args)
    save_model(bundle, prov)
    write_importance(bundle, prov)
    if curve is not None:
        curve.write_csv(prov.path("training_curve.csv"), comment=prov.comment)
    report = evaluation(bundle, train_sel, test_sel, pol, args)
    write_report(report, pol, prov)
    if args.model != "mlp" and len(selected) <= explain.MAX_EXACT_FEATURES:
        rows = test_sel.take(np.arange(min(args.rows, len(test_sel))))
        write_shap(explain.shapley_summary(bundle["model"], rows, explain.default_background(train_sel, seed=args.seed)), prov)

    test_dates = set(audit["test_value_dates"])
    touched = set()
    if isinstance(steps.get("gains"), dict):
        touched |= set(steps["gains"]["fit_value_dates"]) | set(steps["gains"]["validation_value_dates"])
    touched |= set(audit["train_value_dates"])
    leaked = sorted(touched & test_dates)
    if leaked:
        raise BidSelectError(f"test rows reached tuning/gains: {leaked[:5]}")
    audit_log = {
        **audit,
        "steps": steps,
        "tuning_gains_rows_in_test": len(leaked),
        "selected_features": selected,
    }
    prov.json("index_audit.json", audit_log)
    artifacts = {}
    for name in sorted(set(prov.written)):
        artifacts[name] = hashlib.sha256((prov.out / name).read_bytes()).hexdigest()
    prov.json("manifest.json", {
        "artifacts": artifacts,
        "model": args.model,
        "policy": pol.to_dict(),
        "params": None if params is None else params.to_dict(),
        "selected_features": selected,
        "accuracy": report.accuracy,
        "delta_realistic": report.delta_realistic,
    })


# -- parser ------------------------------------------------------------------


def _common(p, data=True, model=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    if data:
        p.add_argument("--days", help="days.csv")
        p.add_argument("--curves", help="curves.csv (complex features)")
        p.add_argument("--features", default="simple", help="simple | complex | custom:<file>")
        p.add_argument("--split", default="random:0.67", help="random:<frac> | years:<train>/<test>")
        p.add_argument("--scaling", default="none", choices=sorted(SCALING_FLAGS))
    if model:
        p.add_argument("--model", default="gbdt_classify", choices=MODEL_KINDS)
        p.add_argument("--params", help="hyperparameter JSON (tune.json or a plain dict)")
        p.add_argument("--policy", help="threshold:<x> | band:<lo>,<hi> | sign")
        p.add_argument("--iters", type=int, default=100, help="random-search draws")
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--bootstrap", type=int, default=100, help="resamples (0 disables)")
        p.add_argument("--gains-validation", type=float, default=0.33, help="GAINS validation share of train")
        p.add_argument("--rows", type=int, default=50, help="test rows to explain")
        p.add_argument("--epochs", type=int, default=150, help="MLP epochs")
        p.add_argument("--mlp-loss", default="custom", choices=mlp.LOSSES)


def build_parser():
    parser = argparse.ArgumentParser(prog="bidselect", description="Pick deterministic or stochastic bidding per day.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p, data=False, model=False)
    p.add_argument("--n-days", type=int, default=1000)
    p.add_argument("--signal-strength", type=float, default=0.9)
    p.add_argument("--noise-std", type=float, default=None)
    p.add_argument("--stochastic-share", type=float, default=0.5)
    p.add_argument("--heteroscedasticity", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="build (and optionally scale) a feature matrix")
    _common(p, model=False)
    p.set_defaults(func=cmd_featurize)

    for name, func, text in (
        ("tune", cmd_tune, "random hyperparameter search on the training rows"),
        ("train", cmd_train, "fit and save a model"),
        ("gains", cmd_gains, "feature-reduction trace"),
        ("explain", cmd_explain, "Shapley report for test rows"),
        ("evaluate", cmd_evaluate, "score a saved model on the test rows"),
        ("backtest", cmd_backtest, "split, tune, gains, train, evaluate"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name in ("explain", "evaluate"):
            p.add_argument("--model-file", required=True)
        if name == "backtest":
            p.add_argument("--skip-gains", action="store_true")
        p.set_defaults(func=func)
    return parser


def _error(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("field", "row", "side", "epoch"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        prov = Provenance(args)
        args.func(args, prov)
    except BidSelectError as exc:
        return _error(exc, exc.exit_code)
    except (OSError, ValueError) as exc:
        return _error(exc, 2)
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        return _error(exc, 3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
