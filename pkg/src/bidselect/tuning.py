"""Randomized hyperparameter search with k-fold CV, and bootstrap evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gbdt
from .errors import BidSelectError, ValidationError
from .policy import Decision, accuracy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    learning_rate: tuple = (0.01, 0.3)  # log-uniform
    max_depth: tuple = (2, 8)
    n_rounds: tuple = (50, 500)
    gamma: tuple = (0.0, 10.0)
    subsample: tuple = (0.5, 1.0)

    def __post_init__(self):
        for name in ("learning_rate", "max_depth", "n_rounds", "gamma", "subsample"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"empty range for {name}", field=name)
        if self.learning_rate[0] <= 0 or self.max_depth[0] < 1 or self.n_rounds[0] < 1:
            raise ValidationError("search bounds outside hyperparameter validity", field="space")
        if self.gamma[0] < 0 or not 0 < self.subsample[0] <= self.subsample[1] <= 1:
            raise ValidationError("search bounds outside hyperparameter validity", field="space")

    def sample(self, rng, base: gbdt.Hyperparameters) -> gbdt.Hyperparameters:
        # draw order is part of the reproducibility contract
        lr = math.exp(rng.uniform(math.log(self.learning_rate[0]), math.log(self.learning_rate[1])))
        depth = int(rng.integers(self.max_depth[0], self.max_depth[1] + 1))
        rounds = int(rng.integers(self.n_rounds[0], self.n_rounds[1] + 1))
        gamma = float(rng.uniform(*self.gamma))
        subsample = float(rng.uniform(*self.subsample))
        return base.replace(learning_rate=lr, max_depth=depth, n_rounds=rounds, gamma=gamma, subsample=subsample)

    def to_dict(self):
        return {k: list(getattr(self, k)) for k in ("learning_rate", "max_depth", "n_rounds", "gamma", "subsample")}


@dataclass
class Trial:
    index: int
    params: gbdt.Hyperparameters
    fold_scores: list | None
    mean: float | None
    error: str | None = None


@dataclass
class TuneResult:
    trials: list
    best: gbdt.Hyperparameters | None
    best_index: int | None
    metric: str
    folds: list = field(default_factory=list)

    def running_best(self):
        out, cur = [], -math.inf
        for t in self.trials:
            if t.mean is not None and t.mean > cur:
                cur = t.mean
            out.append(cur)
        return out

    def write_csv(self, path, comment=None):
        k = len(self.folds)
        with Path(path).open("w", newline="") as handle:
            if comment:
                handle.write(f"# {comment}\n")
            w = csv.writer(handle, lineterminator="\n")
            w.writerow(
                ["trial", "learning_rate", "max_depth", "n_rounds", "gamma", "subsample"]
                + [f"fold_{i}" for i in range(1, k + 1)]
                + ["mean"]
            )
            for t in self.trials:
                scores = t.fold_scores or [None] * k
                p = t.params
                w.writerow(
                    [t.index, repr(p.learning_rate), p.max_depth, p.n_rounds, repr(p.gamma), repr(p.subsample)]
                    + ["" if s is None else repr(s) for s in scores]
                    + ["" if t.mean is None else repr(t.mean)]
                )


def kfold_split(n, k=5, seed=0) -> list:
    """Seeded partition of ``range(n)`` into ``k`` folds differing in size by <= 1.

    ``n`` may also be a sized collection.
    """
    if not isinstance(n, (int, np.integer)):
        n = len(n)
    if k < 2:
        raise ValidationError("k must be >= 2", field="k")
    if k > n:
        raise ValidationError(f"cannot make {k} folds from {n} rows", field="k")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def fold_pairs(folds):
    """(fit_idx, validation_idx) with each fold validating once."""
    for i, val in enumerate(folds):
        fit_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        yield fit_idx, val


def _target(train, objective):
    return train.best.astype(float) if objective == "binary_logistic" else train.strategy_gap.astype(float)


def cv_score(train, params, objective, folds) -> list:
    """Per-fold score: accuracy at 0.5 (classification) or negative MSE."""
    y = _target(train, objective)
    scores = []
    for fit_idx, val_idx in fold_pairs(folds):
        model = gbdt.fit(train.X[fit_idx], y[fit_idx], params, objective, train.names)
        pred = gbdt.predict(model, train.X[val_idx])
        if objective == "binary_logistic":
            dec = np.where(pred > 0.5, int(Decision.DETERMINISTIC), int(Decision.STOCHASTIC))
            scores.append(accuracy(dec, train.best[val_idx]))
        else:
            scores.append(-float(np.mean((pred - y[val_idx]) ** 2)))
    return scores


def random_search(
    train,
    space: SearchSpace | None = None,
    n_iter=1000,
    k=5,
    objective="binary_logistic",
    seed=0,
    base_params: gbdt.Hyperparameters | None = None,
    progress=None,
) -> TuneResult:
    """Evaluate ``n_iter`` random hyperparameter draws by k-fold mean score.

    Only ``train`` is ever touched.  A draw whose fit raises is logged with
    a null score and skipped for the best pick.
    """
    space = space or SearchSpace()
    if n_iter < 1:
        raise ValidationError("n_iter must be >= 1", field="n_iter")
    base = (base_params or gbdt.Hyperparameters()).replace(seed=seed)
    param_seq, fold_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(param_seq)
    folds = kfold_split(len(train), k, np.random.default_rng(fold_seq).integers(2**31))
    trials = []
    best, best_index, best_mean = None, None, -math.inf
    for i in range(n_iter):
        params = space.sample(rng, base)
        try:
            scores = cv_score(train, params, objective, folds)
            mean = float(np.mean(scores))
            trials.append(Trial(i, params, scores, mean))
        except BidSelectError as exc:
            log.warning("trial %d failed: %s", i, exc)
            trials.append(Trial(i, params, None, None, str(exc)))
            continue
        if mean > best_mean:
            best, best_index, best_mean = params, i, mean
        if progress:
            progress(i, mean)
    metric = "accuracy" if objective == "binary_logistic" else "neg_mse"
    return TuneResult(trials, best, best_index, metric, folds)


def bootstrap_eval(decisions, labels, B=100, seed=0) -> tuple[float, float]:
    """Mean and sample std of accuracy over ``B`` resamples of the test rows."""
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    n = d.size
    if n == 0:
        raise ValidationError("bootstrap needs a non-empty test set", field="decisions")
    if B < 2:
        raise ValidationError("B must be >= 2", field="B")
    if d.shape != y.shape:
        raise ValidationError("decisions and labels do not align", field="labels")
    rng = np.random.default_rng(seed)
    correct = (d == y).astype(float)
    classified = (d != Decision.UNCLASSIFIED).astype(float)
    scores = []
    for _ in range(B):
        idx = rng.integers(0, n, n)
        c = classified[idx].sum()
        if c == 0:
            continue
        scores.append(float((correct[idx] * classified[idx]).sum() / c))
    if len(scores) < 2:
        raise ValidationError("too few resamples with classified days", field="decisions")
    scores = np.array(scores)
    return float(scores.mean()), float(scores.std(ddof=1))
