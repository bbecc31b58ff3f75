"""Exact Shapley explanations and gain-driven feature reduction (GAINS)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gbdt
from .errors import ValidationError
from .policy import DecisionPolicy, decide_all, accuracy, realistic_gap

MAX_EXACT_FEATURES = 20
BACKGROUND_CAP = 256
_MASK_CHUNK_ROWS = 1 << 20


@dataclass
class ShapExplanation:
    base_value: float
    contributions: np.ndarray
    prediction: float
    feature_names: list
    values: np.ndarray

    def to_dict(self):
        return {
            "base_value": float(self.base_value),
            "prediction": float(self.prediction),
            "features": [
                {"name": n, "value": float(v), "contribution": float(c)}
                for n, v, c in zip(self.feature_names, self.values, self.contributions)
            ],
        }


def default_background(train, cap=BACKGROUND_CAP, seed=0):
    """Training rows, capped at ``cap`` by a seeded subsample."""
    X = np.asarray(getattr(train, "X", train), dtype=float)
    if len(X) <= cap:
        return X
    idx = np.sort(np.random.default_rng(seed).choice(len(X), size=cap, replace=False))
    return X[idx]


def _shapley_weights(m):
    # weight of a coalition of size s not containing the player
    return np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)])


def _popcount(masks):
    counts = np.zeros(masks.shape, dtype=np.int64)
    x = masks.copy()
    while np.any(x):
        counts += x & 1
        x >>= 1
    return counts


def _coalition_values(model, row, background, players):
    m = len(players)
    n_masks = 1 << m
    B = len(background)
    values = np.empty(n_masks)
    per_chunk = max(1, _MASK_CHUNK_ROWS // B)
    bits = (np.arange(n_masks)[:, None] >> np.arange(m)[None, :]) & 1
    for start in range(0, n_masks, per_chunk):
        stop = min(n_masks, start + per_chunk)
        hybrid = np.repeat(background[None, :, :], stop - start, axis=0)
        for j, feat in enumerate(players):
            on = bits[start:stop, j].astype(bool)
            hybrid[on, :, feat] = row[feat]
        pred = gbdt.predict(model, hybrid.reshape(-1, background.shape[1]))
        values[start:stop] = pred.reshape(stop - start, B).mean(axis=1)
    return values


def shapley_explain(model: gbdt.GbdtModel, row, background) -> ShapExplanation:
    """Exact interventional Shapley values by enumerating feature subsets.

    The value of a coalition is the mean model output over background rows
    with the coalition's features replaced by the explained row's values.
    Logistic models are explained on the probability scale.  Features the
    model never splits on cannot change any coalition value, so they are
    assigned exactly zero and left out of the enumeration.
    """
    p = model.n_features
    if p > MAX_EXACT_FEATURES:
        raise ValidationError(
            f"exact Shapley enumeration supports at most {MAX_EXACT_FEATURES} features, model has {p}; "
            "explain a GAINS-reduced model instead",
            field="features",
        )
    row = np.asarray(getattr(row, "X", row), dtype=float).reshape(-1)
    bg = np.asarray(getattr(background, "X", background), dtype=float)
    if bg.ndim != 2 or len(bg) == 0:
        raise ValidationError("background set is empty", field="background")
    if row.shape[0] != p or bg.shape[1] != p:
        raise ValidationError("row/background width does not match the model", field="features")
    players = sorted(gbdt.used_features(model))
    m = len(players)
    v = _coalition_values(model, row, bg, players)
    phi = np.zeros(p)
    if m:
        masks = np.arange(1 << m)
        weights = np.append(_shapley_weights(m), 0.0)[_popcount(masks)]
        for j, feat in enumerate(players):
            bit = 1 << j
            without = masks[(masks & bit) == 0]
            phi[feat] = float(np.sum(weights[without] * (v[without | bit] - v[without])))
    prediction = float(gbdt.predict(model, row[None, :])[0])
    return ShapExplanation(float(v[0]), phi, prediction, list(model.feature_names), row)


@dataclass
class ShapSummary:
    ranking: list
    mean_abs: dict
    contributions: np.ndarray
    values: np.ndarray
    base_value: float
    feature_names: list

    def to_dict(self):
        return {
            "base_value": self.base_value,
            "ranking": [{"name": n, "mean_abs_contribution": self.mean_abs[n]} for n in self.ranking],
            "rows": [
                {n: {"value": float(x), "contribution": float(c)} for n, x, c in zip(self.feature_names, xr, cr)}
                for xr, cr in zip(self.values, self.contributions)
            ],
        }


def shapley_summary(model, rows, background) -> ShapSummary:
    """Features ranked by mean absolute contribution over ``rows``."""
    X = np.asarray(getattr(rows, "X", rows), dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValidationError("no rows to summarise", field="rows")
    expl = [shapley_explain(model, x, background) for x in X]
    contrib = np.array([e.contributions for e in expl])
    mean_abs = np.abs(contrib).mean(axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    names = list(model.feature_names)
    return ShapSummary(
        ranking=[names[i] for i in order],
        mean_abs={n: float(a) for n, a in zip(names, mean_abs)},
        contributions=contrib,
        values=X,
        base_value=expl[0].base_value,
        feature_names=names,
    )


# -- GAINS -------------------------------------------------------------------


@dataclass
class GainsStep:
    removed: str | None
    remaining: tuple
    accuracy: float
    delta_realistic: float
    importance: dict = field(default_factory=dict)


@dataclass
class GainsTrace:
    steps: list
    selected_step: int

    @property
    def selected_features(self):
        return list(self.steps[self.selected_step].remaining)

    def write_csv(self, path, comment=None):
        with Path(path).open("w", newline="") as handle:
            if comment:
                handle.write(f"# {comment}\n")
            w = csv.writer(handle, lineterminator="\n")
            w.writerow(["step", "removed", "remaining_count", "accuracy", "delta_realistic"])
            for i, s in enumerate(self.steps):
                w.writerow([i, s.removed or "", len(s.remaining), repr(s.accuracy), repr(s.delta_realistic)])

    def to_dict(self):
        return {
            "selected_step": self.selected_step,
            "selected_features": self.selected_features,
            "steps": [
                {
                    "removed": s.removed,
                    "remaining": list(s.remaining),
                    "accuracy": s.accuracy,
                    "delta_realistic": s.delta_realistic,
                    "importance": s.importance,
                }
                for s in self.steps
            ],
        }


def _default_policy(objective):
    return DecisionPolicy.threshold(0.5) if objective == "binary_logistic" else DecisionPolicy.sign()


def gains_loop(train, test, params: gbdt.Hyperparameters, objective="binary_logistic", metric_policy=None,
               select_by="accuracy") -> GainsTrace:
    """Refit, score, and drop the lowest-gain feature until one is left.

    Ties in gain (notably features the model never split on) are broken by
    column order.  The selected step maximises accuracy, preferring fewer
    features on ties; ``select_by="delta"`` minimises the realistic gap
    instead.
    """
    if len(train.names) < 2:
        raise ValidationError("GAINS needs at least two features", field="features")
    if list(train.names) != list(test.names):
        raise ValidationError("train and test feature columns differ", field="features")
    if select_by not in ("accuracy", "delta"):
        raise ValidationError(f"unknown selection criterion {select_by!r}", field="select_by")
    policy = metric_policy or _default_policy(objective)
    y = train.best if objective == "binary_logistic" else train.strategy_gap
    current = list(train.names)
    removed = None
    steps = []
    while True:
        tr, te = train.select(current), test.select(current)
        model = gbdt.fit(tr.X, y, params, objective, current)
        dec = decide_all(gbdt.predict(model, te.X), policy)
        imp = gbdt.gain_importance(model)
        steps.append(GainsStep(removed, tuple(current), accuracy(dec, te.best), realistic_gap(dec, te), imp))
        if len(current) == 1:
            break
        pos = min(range(len(current)), key=lambda j: (imp[current[j]], j))
        removed = current.pop(pos)

    if select_by == "accuracy":
        key = [(s.accuracy, i) for i, s in enumerate(steps)]
    else:
        key = [(-s.delta_realistic, i) for i, s in enumerate(steps)]
    selected = max(key)[1]
    return GainsTrace(steps, selected)


def save_json(obj, path, extra=None):
    payload = obj.to_dict() if hasattr(obj, "to_dict") else obj
    if extra:
        payload = {**payload, **extra}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
