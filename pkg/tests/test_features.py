import dataclasses
import datetime as dt
import json

import numpy as np
import pytest

from bidselect import curves, dataset, features, gbdt
from bidselect.errors import ValidationError
from conftest import make_record


@pytest.fixture(scope="module")
def days_and_curves(synth_small):
    records, curve_sets, _ = synth_small
    records = records[:60]
    sens = curves.curve_features({r.issue_date: curve_sets[r.issue_date] for r in records})
    return dataset.label_days(records), sens


def test_simple_shape_and_order(days_and_curves):
    days, _ = days_and_curves
    one = features.build_simple(days[:1])
    assert one.X.shape == (1, 8)
    assert one.names == list(dataset.SCALAR_FIELDS)
    rec = days[0].record
    assert one.X[0].tolist() == [getattr(rec, n) for n in dataset.SCALAR_FIELDS]


def test_feature_spec_sizes():
    assert len(features.FeatureSpec.complex().names) == 113
    assert len(features.FeatureSpec.simple().names) == 8
    with pytest.raises(ValidationError):
        features.FeatureSpec(("a", "a"))
    with pytest.raises(ValidationError):
        features.FeatureSpec(("a",), "simple")


def test_complex_shape_and_lags(days_and_curves):
    days, sens = days_and_curves
    m = features.build_complex(days, sens)
    assert m.X.shape == (len(days) - 2, 113)
    assert m.names == list(features.COMPLEX_FEATURES)
    by_date = {d.value_date: d for d in days}
    col = m.names.index("DELTA_1")
    for i, d in enumerate(m.value_dates):
        assert m.X[i, col] == by_date[d - dt.timedelta(days=1)].strategy_gap
    i = 5
    issue = days[i + 2].record.issue_date
    assert m.X[i, m.names.index("vol_roll_1")] == curves.rolling_volatility(sens[issue - dt.timedelta(days=1)])
    assert m.X[i, m.names.index("vol_roll_2")] == curves.rolling_volatility(sens[issue - dt.timedelta(days=2)])
    assert m.X[i, m.names.index("bu_3")] == sens[issue][2, 0]
    assert m.X[i, m.names.index("bd_24")] == sens[issue][23, 1]


def test_complex_is_deterministic(days_and_curves):
    days, sens = days_and_curves
    a, b = features.build_complex(days, sens), features.build_complex(days, sens)
    assert np.array_equal(a.X, b.X)


def test_complex_missing_curves(days_and_curves):
    days, sens = days_and_curves
    partial = dict(sens)
    partial.pop(days[30].record.issue_date)
    with pytest.raises(ValidationError):
        features.build_complex(days, partial)


def test_lag_features_have_no_look_ahead(days_and_curves):
    days, sens = days_and_curves
    base = features.build_complex(days, sens)
    k = 40
    rec = days[k].record
    changed = list(days)
    changed[k] = dataset.label_day(dataclasses.replace(rec, beta_det=rec.beta_det + 500.0))
    other = features.build_complex(changed, sens)
    row = base.value_dates.index(days[k].value_date)
    cols = [base.names.index(c) for c in ("DELTA_1", "similar_weekday_gap")]
    assert np.array_equal(base.X[: row + 1][:, cols], other.X[: row + 1][:, cols])
    assert not np.array_equal(base.X[row + 1 :][:, cols], other.X[row + 1 :][:, cols])


def test_similar_weekday_definition(days_and_curves):
    days, sens = days_and_curves
    m = features.build_complex(days, sens)
    by_date = {d.value_date: d for d in days}
    i = len(m) - 1
    d = m.value_dates[i]
    expected = np.mean([by_date[d - dt.timedelta(days=7 * k)].strategy_gap for k in range(1, 5)])
    assert m.X[i, m.names.index("similar_weekday_gap")] == pytest.approx(expected, rel=1e-12)


def year_matrix(values_by_year):
    dates, vals = [], []
    for year, values in values_by_year.items():
        for j, v in enumerate(values):
            dates.append(dt.date(year, 1, 1) + dt.timedelta(days=j))
            vals.append(v)
    n = len(dates)
    z = np.zeros(n)
    return features.FeatureMatrix(["x"], np.array(vals, float)[:, None], dates, z.astype(int), z + 3.0, z, z)


def test_scaling_one_year_example():
    m = year_matrix({2017: [1.0, 2.0, 3.0]})
    stats = features.fit_scaling(m, "per_year")
    out = features.apply_scaling(m, stats)
    assert out.X[:, 0] == pytest.approx([-1.224744871391589, 0.0, 1.224744871391589], abs=1e-4)
    assert np.array_equal(out.strategy_gap, m.strategy_gap)


def test_per_year_standardizes_each_year():
    rng = np.random.default_rng(0)
    m = year_matrix({2016: rng.normal(5, 2, 50).tolist(), 2017: rng.normal(-3, 9, 40).tolist()})
    out = features.apply_scaling(m, features.fit_scaling(m, "per_year"))
    for y in (2016, 2017):
        block = out.X[out.years == y, 0]
        assert abs(block.mean()) < 1e-9 and abs(block.std() - 1) < 1e-9


def test_unseen_year_errors():
    m = year_matrix({2016: [1.0, 2.0], 2017: [3.0, 5.0], 2018: [0.0, 1.0]})
    stats = features.fit_scaling(m, "per_year")
    with pytest.raises(ValidationError, match="rolling_365"):
        features.apply_scaling(year_matrix({2019: [1.0, 2.0]}), stats)


def test_zero_variance_dropped():
    m = year_matrix({2016: [1.0, 2.0, 4.0]}).with_columns(["const"], np.ones(3))
    stats = features.fit_scaling(m, "global")
    assert stats.dropped == ["const"]
    assert features.apply_scaling(m, stats).names == ["x"]


def test_rolling_uses_only_past():
    vals = np.arange(400, dtype=float)
    dates = [dt.date(2016, 1, 1) + dt.timedelta(days=i) for i in range(400)]
    z = np.zeros(400)
    m = features.FeatureMatrix(["x"], vals[:, None], dates, z.astype(int), z, z, z)
    stats = features.fit_scaling(m, "rolling_365")
    mean, std = stats.groups[dates[100].isoformat()]
    assert mean[0] == pytest.approx(np.mean(vals[:100]))
    assert std[0] == pytest.approx(np.std(vals[:100]))
    mean, _ = stats.groups[dates[399].isoformat()]
    assert mean[0] == pytest.approx(np.mean(vals[399 - 365 : 399]))
    out = features.apply_scaling(m, stats)
    assert len(out) == 400 - features.ROLLING_MIN_HISTORY


@pytest.mark.parametrize("mode", ["per_year", "rolling_365", "global"])
def test_scale_unscale_roundtrip(synth_small, mode):
    m = features.build_simple(dataset.label_days(synth_small[0]))
    stats = features.fit_scaling(m, mode)
    scaled = features.apply_scaling(m, stats)
    back = features.invert_scaling(scaled, stats)
    ref = m.select(stats.names).take([m.value_dates.index(d) for d in scaled.value_dates])
    assert np.allclose(back.X, ref.X, rtol=1e-9, atol=1e-12)


def test_scaling_json_roundtrip(tmp_path, synth_small):
    m = features.build_simple(dataset.label_days(synth_small[0]))
    stats = features.fit_scaling(m, "per_year")
    stats.save(tmp_path / "s.json")
    again = features.ScalingStats.from_dict(json.loads((tmp_path / "s.json").read_text()))
    assert np.array_equal(features.apply_scaling(m, again).X, features.apply_scaling(m, stats).X)


def test_tree_splits_scale_invariant(synth_small):
    m = features.build_simple(dataset.label_days(synth_small[0]))
    scaled = features.apply_scaling(m, features.fit_scaling(m, "global"))
    params = gbdt.Hyperparameters(n_rounds=5, max_depth=3)
    a, b = gbdt.fit(m.X, m.best, params), gbdt.fit(scaled.X, m.best, params)
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.left, tb.left)
    assert np.allclose(gbdt.predict(a, m.X), gbdt.predict(b, scaled.X), atol=1e-12)


def test_matrix_csv_roundtrip(tmp_path, days_and_curves):
    days, sens = days_and_curves
    m = features.build_complex(days, sens)
    m.to_csv(tmp_path / "f.csv", comment="c")
    back = features.FeatureMatrix.from_csv(tmp_path / "f.csv")
    assert back.names == m.names and np.array_equal(back.X, m.X) and back.value_dates == m.value_dates
    assert np.array_equal(back.best, m.best)


def test_custom_spec_from_file(tmp_path):
    p = tmp_path / "names.txt"
    p.write_text("water_value\ninflow_deviation\n")
    assert features.FeatureSpec.from_file(p).names == ("water_value", "inflow_deviation")
    p.write_text('["a", "b"]')
    assert features.FeatureSpec.from_file(p).names == ("a", "b")
