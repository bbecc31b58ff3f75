import itertools
import math

import numpy as np
import pytest

from bidselect import explain, features, gbdt
from bidselect.dataset import label_days
from bidselect.errors import ValidationError
from bidselect.explain import ShapExplanation


def brute_shapley(f, row, background):
    """Shapley values from the textbook permutation-free subset formula."""
    p = len(row)

    def v(S):
        hyb = background.copy()
        for j in S:
            hyb[:, j] = row[j]
        return float(np.mean(f(hyb)))

    phi = np.zeros(p)
    for i in range(p):
        others = [j for j in range(p) if j != i]
        for s in range(p):
            w = math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p)
            for S in itertools.combinations(others, s):
                phi[i] += w * (v(S + (i,)) - v(S))
    return phi


@pytest.fixture(scope="module")
def model_and_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 5))
    y = (X[:, 0] - 0.5 * X[:, 1] + 0.3 * X[:, 0] * X[:, 2] + rng.normal(0, 0.5, 300) > 0).astype(float)
    model = gbdt.fit(X, y, gbdt.Hyperparameters(n_rounds=20, max_depth=3, learning_rate=0.3))
    return model, X


def test_matches_brute_force(model_and_data):
    model, X = model_and_data
    bg = X[:40]
    for row in X[100:103]:
        ex = explain.shapley_explain(model, row, bg)
        ref = brute_shapley(lambda Z: gbdt.predict(model, Z), row, bg)
        assert np.allclose(ex.contributions, ref, atol=1e-10)


def test_local_accuracy(model_and_data):
    model, X = model_and_data
    bg = explain.default_background(X)
    for row in X[:20]:
        ex = explain.shapley_explain(model, row, bg)
        assert ex.base_value + ex.contributions.sum() == pytest.approx(ex.prediction, abs=1e-9)


def test_single_feature_model():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 3))
    model = gbdt.fit(X[:, [1]], X[:, 1] ** 2, gbdt.Hyperparameters(n_rounds=10), "squared_error")
    wide = gbdt.GbdtModel(model.objective, [], model.params, ["a", "b", "c"], model.base_margin)
    for t in model.trees:
        t2 = gbdt.Tree(np.where(t.left >= 0, 1, -1), t.threshold, t.gain, t.left, t.right, t.value)
        wide.trees.append(t2)
    ex = explain.shapley_explain(wide, X[0], X)
    assert ex.contributions[0] == 0.0 and ex.contributions[2] == 0.0
    assert ex.contributions[1] == pytest.approx(ex.prediction - ex.base_value, abs=1e-12)


def test_additive_model_decomposes():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 2))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2
    # depth-1 trees split on a single feature each, so the model is additive
    model = gbdt.fit(X, y, gbdt.Hyperparameters(n_rounds=30, max_depth=1), "squared_error")
    bg = X[:64]
    row = X[150]

    def part(j, Z):
        m = gbdt.GbdtModel(model.objective, [t for t in model.trees if t.feature[0] == j], model.params,
                           model.feature_names, 0.0)
        return gbdt.predict(m, Z)

    ex = explain.shapley_explain(model, row, bg)
    for j in (0, 1):
        expected = part(j, row[None, :])[0] - part(j, bg).mean()
        assert ex.contributions[j] == pytest.approx(expected, abs=1e-10)


def test_too_many_features():
    X = np.random.default_rng(0).normal(size=(30, 21))
    model = gbdt.fit(X, X[:, 0], gbdt.Hyperparameters(n_rounds=2), "squared_error")
    with pytest.raises(ValidationError, match="GAINS"):
        explain.shapley_explain(model, X[0], X)


def test_report_arithmetic():
    ex = ShapExplanation(-32.0, np.array([-150.0, -42.45]), -224.45, ["a", "b"], np.array([1.0, 2.0]))
    d = ex.to_dict()
    assert sum(f["contribution"] for f in d["features"]) == pytest.approx(d["prediction"] - d["base_value"])
    assert set(d) == {"base_value", "prediction", "features"}


def test_constant_model_summary_zero():
    X = np.random.default_rng(0).normal(size=(20, 3))
    model = gbdt.fit(X, np.full(20, 2.0), gbdt.Hyperparameters(n_rounds=3), "squared_error")
    s = explain.shapley_summary(model, X, X)
    assert all(v == 0.0 for v in s.mean_abs.values())


def test_summary_ranking_row_order_invariant(model_and_data):
    model, X = model_and_data
    bg = X[:30]
    a = explain.shapley_summary(model, X[:15], bg)
    b = explain.shapley_summary(model, X[:15][::-1], bg)
    assert a.ranking == b.ranking
    assert a.ranking[0] == "f0"


@pytest.fixture(scope="module")
def gains_setup(synth_small):
    m = features.build_simple(label_days(synth_small[0]))
    rng = np.random.default_rng(3)
    m = m.with_columns([f"noise_{i}" for i in range(4)], rng.normal(size=(len(m), 4)))
    idx = rng.permutation(len(m))
    return m.take(np.sort(idx[:260])), m.take(np.sort(idx[260:]))


def test_gains_trace_structure(gains_setup):
    train, test = gains_setup
    trace = explain.gains_loop(train, test, gbdt.Hyperparameters(n_rounds=20, max_depth=3))
    assert len(trace.steps) == len(train.names)
    for a, b in zip(trace.steps, trace.steps[1:]):
        diff = set(a.remaining) - set(b.remaining)
        assert set(b.remaining) < set(a.remaining) and len(diff) == 1
        low = min(a.importance[n] for n in a.remaining)
        assert a.importance[b.removed] == low
        assert diff == {b.removed}
    best = max(s.accuracy for s in trace.steps)
    winners = [i for i, s in enumerate(trace.steps) if s.accuracy == best]
    assert trace.selected_step == max(winners)


def test_dropping_unused_feature_keeps_predictions(gains_setup):
    train, test = gains_setup
    params = gbdt.Hyperparameters(n_rounds=10, max_depth=2)
    model = gbdt.fit(train.X, train.best, params, "binary_logistic", train.names)
    unused = [n for j, n in enumerate(train.names) if j not in gbdt.used_features(model)]
    assert unused
    keep = [n for n in train.names if n != unused[0]]
    smaller = gbdt.fit(train.select(keep).X, train.best, params, "binary_logistic", keep)
    assert np.array_equal(gbdt.predict(model, test), gbdt.predict(smaller, test.select(keep)))


def test_gains_csv(tmp_path, gains_setup):
    train, test = gains_setup
    trace = explain.gains_loop(train.select(train.names[:3]), test.select(train.names[:3]),
                               gbdt.Hyperparameters(n_rounds=5))
    trace.write_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "step,removed,remaining_count,accuracy,delta_realistic"
    assert len(lines) == 4
