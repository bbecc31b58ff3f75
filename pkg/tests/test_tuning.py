import numpy as np
import pytest

from bidselect import features, gbdt, tuning
from bidselect.dataset import label_days
from bidselect.errors import ValidationError


@pytest.fixture(scope="module")
def simple_matrix(synth_small):
    return features.build_simple(label_days(synth_small[0]))


def test_kfold_examples():
    folds = tuning.kfold_split(10, 5, seed=1)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    again = tuning.kfold_split(10, 5, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))


@pytest.mark.parametrize("n, k", [(11, 5), (97, 7), (5, 5)])
def test_kfold_sizes_differ_by_at_most_one(n, k):
    sizes = [len(f) for f in tuning.kfold_split(n, k)]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == n


def test_kfold_too_many_folds():
    with pytest.raises(ValidationError):
        tuning.kfold_split(4, 5)


def test_fold_pairs_validate_each_fold_once():
    folds = tuning.kfold_split(23, 4, seed=2)
    seen = []
    for fit_idx, val_idx in tuning.fold_pairs(folds):
        assert len(np.intersect1d(fit_idx, val_idx)) == 0
        assert len(fit_idx) + len(val_idx) == 23
        seen.extend(val_idx.tolist())
    assert sorted(seen) == list(range(23))


def test_search_space_draws_within_bounds():
    space = tuning.SearchSpace()
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = space.sample(rng, gbdt.Hyperparameters())
        assert 0.01 <= p.learning_rate <= 0.3
        assert 2 <= p.max_depth <= 8
        assert 50 <= p.n_rounds <= 500
        assert 0 <= p.gamma <= 10
        assert 0.5 <= p.subsample <= 1.0


def small_space():
    return tuning.SearchSpace(n_rounds=(5, 20), max_depth=(2, 4))


def test_single_iteration_is_best(simple_matrix):
    res = tuning.random_search(simple_matrix, small_space(), n_iter=1, k=3, seed=2)
    assert res.best_index == 0 and res.best == res.trials[0].params


def test_search_reproducible_and_prefix_stable(simple_matrix):
    a = tuning.random_search(simple_matrix, small_space(), n_iter=4, k=3, seed=5)
    b = tuning.random_search(simple_matrix, small_space(), n_iter=8, k=3, seed=5)
    assert [t.params for t in a.trials] == [t.params for t in b.trials[:4]]
    assert [t.fold_scores for t in a.trials] == [t.fold_scores for t in b.trials[:4]]
    assert max(t.mean for t in b.trials) >= max(t.mean for t in a.trials)
    running = b.running_best()
    assert all(y >= x for x, y in zip(running, running[1:]))
    assert b.trials[b.best_index].mean == max(t.mean for t in b.trials)


def test_fold_scores_spread(simple_matrix):
    res = tuning.random_search(simple_matrix, small_space(), n_iter=3, k=5, seed=1)
    assert any(max(t.fold_scores) - min(t.fold_scores) > 0 for t in res.trials)


def test_regression_metric(simple_matrix):
    res = tuning.random_search(simple_matrix, small_space(), n_iter=2, k=3, objective="squared_error")
    assert res.metric == "neg_mse"
    assert all(t.mean < 0 for t in res.trials)


def test_trial_csv(tmp_path, simple_matrix):
    res = tuning.random_search(simple_matrix, small_space(), n_iter=2, k=3)
    path = tmp_path / "trials.csv"
    res.write_csv(path, comment="c")
    lines = path.read_text().splitlines()
    assert lines[1] == "trial,learning_rate,max_depth,n_rounds,gamma,subsample,fold_1,fold_2,fold_3,mean"
    assert len(lines) == 4


def test_bootstrap_examples():
    y = np.array([0, 1] * 50)
    mean, std = tuning.bootstrap_eval(y, y, B=50, seed=1)
    assert mean == 1.0 and std == 0.0
    with pytest.raises(ValidationError):
        tuning.bootstrap_eval([], [], B=10)


def test_bootstrap_consistent_with_plain_accuracy():
    rng = np.random.default_rng(8)
    y = rng.integers(0, 2, 500)
    dec = np.where(rng.random(500) < 0.7, y, 1 - y)
    plain = float(np.mean(dec == y))
    mean, std = tuning.bootstrap_eval(dec, y, B=200, seed=3)
    se = np.sqrt(plain * (1 - plain) / 500)
    assert abs(mean - plain) <= 3 * se
    assert 0.5 * se < std < 2 * se
