"""Gradient-boosted regression trees (second-order, exact greedy splits).

Supports a binary logistic objective (outputs are probabilities) and a
squared-error objective (outputs in label units).  Every accepted split
stores its loss reduction so that gain importances can be read off the
fitted ensemble.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import ColumnMismatchError, ValidationError

OBJECTIVES = ("binary_logistic", "squared_error")


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 0.3
    max_depth: int = 6
    n_rounds: int = 100
    gamma: float = 0.0
    subsample: float = 1.0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    base_score: float | None = None
    seed: int = 0

    def __post_init__(self):
        checks = (
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (int(self.max_depth) == self.max_depth and self.max_depth >= 1, "max_depth must be an integer >= 1"),
            (int(self.n_rounds) == self.n_rounds and self.n_rounds >= 1, "n_rounds must be an integer >= 1"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (0 < self.subsample <= 1, "subsample must lie in (0, 1]"),
            (self.reg_lambda >= 0, "lambda must be >= 0"),
            (self.min_child_weight >= 0, "min_child_weight must be >= 0"),
        )
        for ok, message in checks:
            if not ok:
                raise ValidationError(message, field="params")
        object.__setattr__(self, "max_depth", int(self.max_depth))
        object.__setattr__(self, "n_rounds", int(self.n_rounds))

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return Hyperparameters(**values)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["reg_lambda"] = data.pop("lambda")
        return cls(**data)


@dataclass
class Tree:
    """Flat node arrays; ``left[k] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    gain: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def is_leaf(self, k):
        return self.left[k] < 0

    def depth(self):
        def walk(k):
            if self.left[k] < 0:
                return 0
            return 1 + max(walk(self.left[k]), walk(self.right[k]))

        return walk(0)

    def to_nested(self, k=0):
        if self.left[k] < 0:
            return {"leaf_weight": float(self.value[k])}
        return {
            "feature": int(self.feature[k]),
            "threshold": float(self.threshold[k]),
            "gain": float(self.gain[k]),
            "left": self.to_nested(int(self.left[k])),
            "right": self.to_nested(int(self.right[k])),
        }

    @classmethod
    def from_nested(cls, node):
        rows = []

        def add(n):
            k = len(rows)
            rows.append(None)
            if "leaf_weight" in n:
                rows[k] = (-1, 0.0, 0.0, -1, -1, float(n["leaf_weight"]))
            else:
                left = add(n["left"])
                right = add(n["right"])
                rows[k] = (int(n["feature"]), float(n["threshold"]), float(n["gain"]), left, right, 0.0)
            return k

        add(node)
        cols = list(zip(*rows))
        return cls(
            feature=np.array(cols[0], dtype=np.int64),
            threshold=np.array(cols[1], dtype=np.float64),
            gain=np.array(cols[2], dtype=np.float64),
            left=np.array(cols[3], dtype=np.int64),
            right=np.array(cols[4], dtype=np.int64),
            value=np.array(cols[5], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, weight=0.0):
        return cls(
            feature=np.array([-1]),
            threshold=np.zeros(1),
            gain=np.zeros(1),
            left=np.array([-1]),
            right=np.array([-1]),
            value=np.array([float(weight)]),
        )


# -- kernels -----------------------------------------------------------------


@numba.njit(cache=True)
def _grow_tree(X, order, g, h, in_sample, max_depth, lam, gamma, min_child_weight):
    n, p = X.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    gain = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    node_g = np.zeros(max_nodes)
    node_h = np.zeros(max_nodes)
    node_of = np.full(n, -1, np.int64)
    for r in range(n):
        if in_sample[r]:
            node_of[r] = 0
            node_g[0] += g[r]
            node_h[0] += h[r]

    n_nodes = 1
    level_start = 0
    level_end = 1
    depth = 0
    while level_start < level_end:
        m = level_end - level_start
        best_gain = np.full(m, -np.inf)
        best_feat = np.full(m, -1, np.int64)
        best_thr = np.zeros(m)
        if depth < max_depth:
            gl = np.zeros(m)
            hl = np.zeros(m)
            last = np.zeros(m)
            seen = np.zeros(m, np.bool_)
            for j in range(p):
                gl[:] = 0.0
                hl[:] = 0.0
                seen[:] = False
                for idx in range(n):
                    r = order[j, idx]
                    k = node_of[r]
                    if k < level_start:
                        continue
                    kk = k - level_start
                    v = X[r, j]
                    if seen[kk] and v > last[kk]:
                        gr = node_g[k] - gl[kk]
                        hr = node_h[k] - hl[kk]
                        if hl[kk] >= min_child_weight and hr >= min_child_weight:
                            gsum = node_g[k]
                            hsum = node_h[k]
                            gn = 0.5 * (
                                gl[kk] * gl[kk] / (hl[kk] + lam)
                                + gr * gr / (hr + lam)
                                - gsum * gsum / (hsum + lam)
                            )
                            if gn > best_gain[kk]:
                                best_gain[kk] = gn
                                best_feat[kk] = j
                                best_thr[kk] = 0.5 * (last[kk] + v)
                    gl[kk] += g[r]
                    hl[kk] += h[r]
                    last[kk] = v
                    seen[kk] = True

        for kk in range(m):
            k = level_start + kk
            if best_feat[kk] >= 0 and best_gain[kk] > 0.0 and best_gain[kk] >= gamma:
                feature[k] = best_feat[kk]
                threshold[k] = best_thr[kk]
                gain[k] = best_gain[kk]
                left[k] = n_nodes
                right[k] = n_nodes + 1
                n_nodes += 2
            else:
                value[k] = -node_g[k] / (node_h[k] + lam)

        for r in range(n):
            k = node_of[r]
            if k < level_start:
                continue
            if left[k] >= 0:
                if X[r, feature[k]] < threshold[k]:
                    c = left[k]
                else:
                    c = right[k]
                node_of[r] = c
                node_g[c] += g[r]
                node_h[c] += h[r]
            else:
                node_of[r] = -1

        level_start = level_end
        level_end = n_nodes
        depth += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        gain[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@numba.njit(cache=True)
def _predict_packed(X, offsets, feature, threshold, left, right, value, scale, out):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for r in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            k = 0
            while left[base + k] >= 0:
                if X[r, feature[base + k]] < threshold[base + k]:
                    k = left[base + k]
                else:
                    k = right[base + k]
            acc += value[base + k]
        out[r] += scale * acc


def _pack(trees):
    sizes = [t.n_nodes for t in trees]
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    if not trees:
        empty_i = np.zeros(0, dtype=np.int64)
        empty_f = np.zeros(0)
        return offsets, empty_i, empty_f, empty_i, empty_i, empty_f
    return (
        offsets,
        np.concatenate([t.feature for t in trees]).astype(np.int64),
        np.concatenate([t.threshold for t in trees]).astype(np.float64),
        np.concatenate([t.left for t in trees]).astype(np.int64),
        np.concatenate([t.right for t in trees]).astype(np.int64),
        np.concatenate([t.value for t in trees]).astype(np.float64),
    )


# -- objectives --------------------------------------------------------------


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def gradients(objective, margin, y):
    """Per-row gradient and hessian of the loss at ``margin``."""
    if objective == "binary_logistic":
        p = sigmoid(margin)
        return p - y, p * (1.0 - p)
    if objective == "squared_error":
        return margin - y, np.ones_like(margin)
    raise ValidationError(f"unknown objective {objective!r}", field="objective")


def loss(objective, margin, y):
    """Mean training loss: log-loss or squared error."""
    if objective == "binary_logistic":
        # log(1 + e^m) - y m, written stably
        return float(np.mean(np.logaddexp(0.0, margin) - y * margin))
    return float(np.mean((margin - y) ** 2))


def _base_margin(objective, base_score, y):
    if objective == "binary_logistic":
        p = 0.5 if base_score is None else float(base_score)
        if not 0.0 < p < 1.0:
            raise ValidationError("logistic base_score must lie in (0, 1)", field="base_score")
        return math.log(p / (1.0 - p))
    return float(np.mean(y)) if base_score is None else float(base_score)


# -- model -------------------------------------------------------------------


@dataclass
class GbdtModel:
    objective: str
    trees: list
    params: Hyperparameters
    feature_names: list
    base_margin: float
    train_loss: list = field(default_factory=list)

    def __post_init__(self):
        self._packed = None

    @property
    def n_features(self):
        return len(self.feature_names)

    def packed(self):
        if self._packed is None:
            self._packed = _pack(self.trees)
        return self._packed

    def to_dict(self):
        return {
            "objective": self.objective,
            "params": self.params.to_dict(),
            "feature_names": list(self.feature_names),
            "base_margin": self.base_margin,
            "train_loss": list(self.train_loss),
            "trees": [t.to_nested() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            objective=data["objective"],
            trees=[Tree.from_nested(t) for t in data["trees"]],
            params=Hyperparameters.from_dict(data["params"]),
            feature_names=list(data["feature_names"]),
            base_margin=float(data["base_margin"]),
            train_loss=list(data.get("train_loss", [])),
        )

    def save(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_array(X):
    names = getattr(X, "names", None)
    data = getattr(X, "X", X)
    return np.ascontiguousarray(data, dtype=np.float64), names


def fit(X, y, params: Hyperparameters | None = None, objective="binary_logistic", feature_names=None) -> GbdtModel:
    """Boost ``params.n_rounds`` trees on features ``X`` and labels ``y``."""
    params = params or Hyperparameters()
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}", field="objective")
    X, names = _as_array(X)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("training set is empty", field="X")
    if y.shape != (X.shape[0],):
        raise ValidationError("labels do not align with feature rows", field="y")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValidationError("features and labels must be finite", field="X")
    if objective == "binary_logistic" and not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic objective needs labels in {0, 1}", field="y")
    n, p = X.shape
    names = list(feature_names or names or [f"f{j}" for j in range(p)])
    if len(names) != p:
        raise ValidationError("feature_names length does not match columns", field="feature_names")

    base = _base_margin(objective, params.base_score, y)
    margin = np.full(n, base)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    rng = np.random.default_rng(params.seed)
    n_sub = max(1, int(round(params.subsample * n)))
    in_sample = np.ones(n, dtype=np.bool_)
    trees, history = [], []
    for _ in range(params.n_rounds):
        g, h = gradients(objective, margin, y)
        if params.subsample < 1.0:
            in_sample = np.zeros(n, dtype=np.bool_)
            in_sample[rng.choice(n, size=n_sub, replace=False)] = True
        arrays = _grow_tree(
            X, order, g, h, in_sample,
            params.max_depth, float(params.reg_lambda), float(params.gamma), float(params.min_child_weight),
        )
        tree = Tree(*arrays)
        trees.append(tree)
        _predict_packed(X, *_pack([tree]), params.learning_rate, margin)
        history.append(loss(objective, margin, y))
    return GbdtModel(objective, trees, params, names, base, history)


def predict_margin(model: GbdtModel, X) -> np.ndarray:
    X, names = _as_array(X)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ColumnMismatchError(
            f"model expects {model.n_features} feature columns, got {X.shape[1] if X.ndim == 2 else X.shape}",
            field="features",
        )
    if names is not None and list(names) != list(model.feature_names):
        raise ColumnMismatchError("feature names differ from those the model was trained on", field="features")
    out = np.full(X.shape[0], model.base_margin)
    if model.trees:
        _predict_packed(X, *model.packed(), model.params.learning_rate, out)
    return out


def predict(model: GbdtModel, X) -> np.ndarray:
    """Probabilities for the logistic objective, label units otherwise."""
    margin = predict_margin(model, X)
    if model.objective == "binary_logistic":
        return sigmoid(margin)
    return margin


def gain_importance(model: GbdtModel) -> dict:
    """Total recorded split gain per feature name (0 for unused features)."""
    total = np.zeros(model.n_features)
    for tree in model.trees:
        internal = tree.left >= 0
        np.add.at(total, tree.feature[internal], tree.gain[internal])
    return dict(zip(model.feature_names, total.tolist()))


def used_features(model: GbdtModel) -> set:
    used = set()
    for tree in model.trees:
        used.update(tree.feature[tree.left >= 0].tolist())
    return used
