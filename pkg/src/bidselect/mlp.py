"""Feed-forward network benchmark with hand-written backpropagation.

Two losses are supported:

* ``mse`` on a single output (the strategy gap),
* ``custom`` on two outputs (per-strategy gaps): the mean of
  ``|min(b_det, b_stoch) - min(b̂_det, b̂_stoch)| ** power``.

Training uses mini-batch Adam, inverted dropout on hidden layers and an L1
penalty on the weight matrices.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDivergedError, ValidationError

LOSSES = ("mse", "custom")

_ACTIVATIONS = {
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple = (50, 20)
    activation: str = "identity"
    dropout_frac: float = 0.2
    l1_coeff: float = 0.005
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    epochs: int = 150
    batch_size: int = 32
    loss_power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValidationError("layer sizes must be >= 1", field="hidden")
        if not 0.0 <= self.dropout_frac < 1.0:
            raise ValidationError("dropout_frac must lie in [0, 1)", field="dropout_frac")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}", field="activation")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1", field="epochs")
        if self.loss_power <= 0:
            raise ValidationError("loss_power must be > 0", field="loss_power")

    def layer_sizes(self, n_in, n_out):
        return [n_in, *self.hidden, n_out]

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return MlpConfig(**values)


@dataclass
class TrainingCurve:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def write_csv(self, path, comment=None):
        with Path(path).open("w", newline="") as handle:
            if comment:
                handle.write(f"# {comment}\n")
            w = csv.writer(handle, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([i, repr(a), repr(b)])


@dataclass
class MlpModel:
    weights: list
    biases: list
    config: MlpConfig

    @property
    def n_inputs(self):
        return self.weights[0].shape[0]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[1]

    def to_dict(self):
        return {
            "config": asdict(self.config),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data):
        cfg = dict(data["config"])
        return cls(
            [np.array(w, dtype=float) for w in data["weights"]],
            [np.array(b, dtype=float) for b in data["biases"]],
            MlpConfig(**cfg),
        )

    def save(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_model(config: MlpConfig, n_in, n_out, rng=None) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    sizes = config.layer_sizes(n_in, n_out)
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-limit, limit, size=(a, b)))
        biases.append(np.zeros(b))
    return MlpModel(weights, biases, config)


def _forward(model, X, rng=None):
    """Return output and the per-layer cache; dropout only when ``rng`` given."""
    act, _ = _ACTIVATIONS[model.config.activation]
    a = X
    cache = []
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        if i == last:
            cache.append((a, z, None))
            return z, cache
        h = act(z)
        mask = None
        if rng is not None and model.config.dropout_frac > 0:
            keep = 1.0 - model.config.dropout_frac
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        cache.append((a, z, mask))
        a = h


def predict(model: MlpModel, X) -> np.ndarray:
    """Deterministic inference (dropout off)."""
    X = np.asarray(getattr(X, "X", X), dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValidationError(f"model expects {model.n_inputs} input columns", field="features")
    out, _ = _forward(model, X)
    return out


def _check_targets(loss, y):
    y = np.asarray(y, dtype=float)
    if loss == "mse":
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[1] != 1:
            raise ValidationError("mse loss needs a single output column", field="y")
    elif loss == "custom":
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValidationError("custom loss needs two outputs (beta_det, beta_stoch)", field="y")
    else:
        raise ValidationError(f"unknown loss {loss!r}", field="loss")
    return y


def data_loss(loss, pred, y, power=1.0):
    if loss == "mse":
        return float(np.mean((pred - y) ** 2))
    return float(np.mean(np.abs(y.min(axis=1) - pred.min(axis=1)) ** power))


def custom_loss(beta_true, beta_pred, power=1.0):
    """Mean ``|min(true) - min(pred)| ** power`` over rows of (det, stoch) pairs."""
    return data_loss("custom", np.asarray(beta_pred, float), np.asarray(beta_true, float), power)


def _output_grad(loss, pred, y, power):
    n = pred.shape[0]
    if loss == "mse":
        return 2.0 * (pred - y) / n
    diff = y.min(axis=1) - pred.min(axis=1)
    mag = np.abs(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = -power * np.where(mag > 0, mag ** (power - 1.0), 0.0) * np.sign(diff) / n
    grad = np.zeros_like(pred)
    branch = np.where(pred[:, 0] <= pred[:, 1], 0, 1)  # ties -> det column
    grad[np.arange(n), branch] = d
    return grad


def penalty(model):
    return model.config.l1_coeff * float(sum(np.abs(W).sum() for W in model.weights))


def loss_and_grads(model: MlpModel, X, y, loss, rng=None):
    """Objective (data loss + L1) and its gradients w.r.t. weights and biases."""
    y = _check_targets(loss, y)
    if y.shape[1] != model.n_outputs:
        raise ValidationError("output arity does not match the loss", field="y")
    _, dact = _ACTIVATIONS[model.config.activation]
    pred, cache = _forward(model, X, rng)
    value = data_loss(loss, pred, y, model.config.loss_power) + penalty(model)
    delta = _output_grad(loss, pred, y, model.config.loss_power)
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        a_in, _, _ = cache[i]
        gw[i] = a_in.T @ delta + model.config.l1_coeff * np.sign(model.weights[i])
        gb[i] = delta.sum(axis=0)
        if i > 0:
            _, z_prev, mask_prev = cache[i - 1]
            delta = delta @ model.weights[i].T
            if mask_prev is not None:
                delta = delta * mask_prev
            delta = delta * dact(z_prev)
    return value, gw, gb


def _validation_split(n, fraction, sequential, rng):
    n_val = max(1, int(round(fraction * n)))
    if n_val >= n:
        raise ValidationError("validation split leaves no training rows", field="validation_fraction")
    if sequential:
        idx = np.arange(n)
    else:
        idx = rng.permutation(n)
    return np.sort(idx[: n - n_val]), np.sort(idx[n - n_val :])


def mlp_fit(X, y, config: MlpConfig | None = None, loss="mse", validation_fraction=0.2, sequential=False):
    """Train with mini-batch Adam; returns ``(model, TrainingCurve)``.

    With ``sequential=True`` validation is the last fraction of rows,
    otherwise a seeded random subset.  Recorded losses are data losses with
    dropout off.
    """
    config = config or MlpConfig()
    X = np.asarray(getattr(X, "X", X), dtype=float)
    y = _check_targets(loss, y)
    if not 0.0 < validation_fraction <= 0.5:
        raise ValidationError("validation_fraction must lie in (0, 0.5]", field="validation_fraction")
    if len(X) != len(y):
        raise ValidationError("X and y differ in length", field="y")
    rng = np.random.default_rng(config.seed)
    fit_idx, val_idx = _validation_split(len(X), validation_fraction, sequential, rng)
    Xf, yf, Xv, yv = X[fit_idx], y[fit_idx], X[val_idx], y[val_idx]
    model = init_model(config, X.shape[1], y.shape[1], rng)
    curve = TrainingCurve()
    with np.errstate(over="ignore", invalid="ignore"):
        _train_epochs(model, Xf, yf, Xv, yv, loss, config, rng, curve)
    return model, curve


def _train_epochs(model, Xf, yf, Xv, yv, loss, config, rng, curve):
    m_w = [np.zeros_like(W) for W in model.weights]
    v_w = [np.zeros_like(W) for W in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    b1, b2, eps, lr = config.beta1, config.beta2, config.epsilon, config.learning_rate
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(Xf))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            _, gw, gb = loss_and_grads(model, Xf[batch], yf[batch], loss, rng)
            step += 1
            corr1 = 1.0 - b1**step
            corr2 = 1.0 - b2**step
            for params, grads, ms, vs in ((model.weights, gw, m_w, v_w), (model.biases, gb, m_b, v_b)):
                for i, g in enumerate(grads):
                    ms[i] = b1 * ms[i] + (1 - b1) * g
                    vs[i] = b2 * vs[i] + (1 - b2) * g * g
                    params[i] = params[i] - lr * (ms[i] / corr1) / (np.sqrt(vs[i] / corr2) + eps)
        tr = data_loss(loss, predict(model, Xf), yf, config.loss_power)
        va = data_loss(loss, predict(model, Xv), yv, config.loss_power)
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        curve.train_loss.append(tr)
        curve.val_loss.append(va)


def _flat_params(model):
    return [(lst, i) for lst in (model.weights, model.biases) for i in range(len(lst))]


def _kink_pattern(model, X, y, loss):
    pred = predict(model, X)
    pattern = [np.sign(W) for W in model.weights] if model.config.l1_coeff else []
    if loss == "custom":
        pattern.append(pred[:, 0] <= pred[:, 1])
        pattern.append(np.sign(y.min(axis=1) - pred.min(axis=1)))
    return pattern


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(config: MlpConfig, loss, X_small, y_small, model=None, step=1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Inputs are standardized and dropout is off.  Parameters whose
    perturbation moves any sample across a kink (min branch, the absolute
    value at zero error, or an L1 sign change) are excluded.
    """
    config = config.replace(dropout_frac=0.0)
    X = np.asarray(X_small, dtype=float)
    if len(X) > 10:
        raise ValidationError("gradient_check takes at most 10 samples", field="X_small")
    std = X.std(axis=0)
    X = (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)
    y = _check_targets(loss, y_small)
    if model is None:
        model = init_model(config, X.shape[1], y.shape[1])
    else:
        model = MlpModel([W.copy() for W in model.weights], [b.copy() for b in model.biases], config)
    _, gw, gb = loss_and_grads(model, X, y, loss)
    analytic = {id(model.weights): gw, id(model.biases): gb}
    base_pattern = _kink_pattern(model, X, y, loss)
    worst = 0.0
    for lst, i in _flat_params(model):
        arr = lst[i]
        grad = analytic[id(lst)][i]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus_pattern = _kink_pattern(model, X, y, loss)
            f_plus = loss_and_grads(model, X, y, loss)[0]
            arr[idx] = orig - step
            minus_pattern = _kink_pattern(model, X, y, loss)
            f_minus = loss_and_grads(model, X, y, loss)[0]
            arr[idx] = orig
            if not (_same(base_pattern, plus_pattern) and _same(base_pattern, minus_pattern)):
                continue
            numeric = (f_plus - f_minus) / (2 * step)
            a = grad[idx]
            denom = max(abs(a), abs(numeric))
            if denom == 0.0:
                continue
            worst = max(worst, abs(a - numeric) / max(denom, 1e-8))
    return worst


def overfit_report(curve: TrainingCurve) -> int:
    """1-based epoch with the lowest validation loss (earliest on ties)."""
    if not curve.val_loss:
        raise ValidationError("training curve is empty", field="curve")
    return int(np.argmin(curve.val_loss)) + 1


def collapsed_affine(model: MlpModel):
    """For identity activations: the single (W, b) the network reduces to."""
    if model.config.activation != "identity":
        raise ValidationError("only identity networks collapse to an affine map", field="activation")
    W = np.eye(model.n_inputs)
    b = np.zeros(model.n_inputs)
    for Wi, bi in zip(model.weights, model.biases):
        b = b @ Wi + bi
        W = W @ Wi
    return W, b
