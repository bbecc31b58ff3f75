"""Turning model outputs into strategy decisions and scoring them."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class Decision(enum.IntEnum):
    UNCLASSIFIED = -1
    STOCHASTIC = 0
    DETERMINISTIC = 1

    @property
    def label(self):
        return {-1: "Unclassified", 0: "Stochastic", 1: "Deterministic"}[int(self)]


POLICY_KINDS = ("classification_threshold", "band", "regression_sign")


@dataclass(frozen=True)
class DecisionPolicy:
    """``lower``/``upper`` are probabilities, or EUR/day for ``regression_sign``."""

    kind: str = "classification_threshold"
    lower: float = 0.5
    upper: float | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValidationError(f"unknown policy kind {self.kind!r}", field="kind")
        if self.kind == "regression_sign":
            return
        upper = self.lower if self.upper is None else self.upper
        if not 0.0 <= self.lower <= upper <= 1.0:
            raise ValidationError("probability thresholds need 0 <= lower <= upper <= 1", field="lower")
        if self.kind == "band":
            object.__setattr__(self, "upper", upper)

    @classmethod
    def threshold(cls, x=0.5):
        return cls("classification_threshold", x)

    @classmethod
    def band(cls, lo, hi):
        return cls("band", lo, hi)

    @classmethod
    def sign(cls):
        return cls("regression_sign", 0.0)

    def to_dict(self):
        return {"kind": self.kind, "lower": self.lower, "upper": self.upper}


def decide_all(outputs, policy: DecisionPolicy) -> np.ndarray:
    """Vectorised :func:`decide`; returns ``Decision`` integer codes."""
    out = np.asarray(outputs, dtype=float)
    if policy.kind != "regression_sign" and np.any((out < 0) | (out > 1) | ~np.isfinite(out)):
        raise ValidationError("probability outputs must lie in [0, 1]", field="output")
    if policy.kind == "classification_threshold":
        return np.where(out > policy.lower, int(Decision.DETERMINISTIC), int(Decision.STOCHASTIC))
    if policy.kind == "band" and policy.upper > policy.lower:
        res = np.full(out.shape, int(Decision.UNCLASSIFIED))
        res[out > policy.upper] = Decision.DETERMINISTIC
        res[out < policy.lower] = Decision.STOCHASTIC
        return res
    if not np.all(np.isfinite(out)):
        raise ValidationError("regression outputs must be finite", field="output")
    return np.where(out > policy.lower, int(Decision.DETERMINISTIC), int(Decision.STOCHASTIC))


def decide(output: float, policy: DecisionPolicy) -> Decision:
    """Boundary values go to Stochastic."""
    return Decision(int(decide_all([output], policy)[0]))


def accuracy(decisions, labels) -> float:
    """Share of correct decisions among classified days."""
    d = np.asarray(decisions, dtype=int)
    y = np.asarray(labels, dtype=int)
    classified = d != Decision.UNCLASSIFIED
    if not classified.any():
        raise ValidationError("accuracy needs at least one classified day", field="decisions")
    return float(np.mean(d[classified] == y[classified]))


def _betas(days):
    if hasattr(days, "beta_det") and hasattr(days, "beta_stoch"):
        return np.asarray(days.beta_det, dtype=float), np.asarray(days.beta_stoch, dtype=float)
    return (
        np.array([d.record.beta_det for d in days], dtype=float),
        np.array([d.record.beta_stoch for d in days], dtype=float),
    )


def chosen_gaps(decisions, days, fallback=Decision.STOCHASTIC) -> np.ndarray:
    beta_det, beta_stoch = _betas(days)
    d = np.asarray(decisions, dtype=int)
    if d.shape != beta_det.shape:
        raise ValidationError("decisions do not align with days", field="decisions")
    if Decision(fallback) == Decision.UNCLASSIFIED:
        raise ValidationError("fallback must be a strategy", field="fallback")
    d = np.where(d == Decision.UNCLASSIFIED, int(fallback), d)
    return np.where(d == Decision.DETERMINISTIC, beta_det, beta_stoch)


def realistic_gap(decisions, days, fallback=Decision.STOCHASTIC) -> float:
    """Relative excess of the realised mean gap over the per-day optimum."""
    chosen = chosen_gaps(decisions, days, fallback)
    beta_det, beta_stoch = _betas(days)
    optimal = float(np.mean(np.minimum(beta_det, beta_stoch)))
    if optimal == 0:
        raise ValidationError("mean optimal gap is zero; realistic gap undefined", field="days")
    return (float(np.mean(chosen)) - optimal) / optimal


@dataclass
class EvaluationReport:
    accuracy: float
    delta_realistic: float
    classified_fraction: float
    mean_gap_chosen: float
    mean_gap_optimal: float
    decisions: list
    bootstrap: dict | None = None
    baselines: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "delta_realistic": self.delta_realistic,
            "classified_fraction": self.classified_fraction,
            "mean_gap_chosen": self.mean_gap_chosen,
            "mean_gap_optimal": self.mean_gap_optimal,
            "bootstrap": self.bootstrap,
            "baselines": self.baselines,
            "decisions": self.decisions,
        }


def evaluate(outputs, days, policy: DecisionPolicy, fallback=Decision.STOCHASTIC, value_dates=None):
    """Score model outputs on labeled days (a FeatureMatrix or LabeledDay list)."""
    outputs = np.asarray(outputs, dtype=float)
    dec = decide_all(outputs, policy)
    beta_det, beta_stoch = _betas(days)
    if hasattr(days, "best"):
        best = np.asarray(days.best, dtype=int)
        value_dates = value_dates or days.value_dates
    else:
        best = np.array([d.best for d in days], dtype=int)
        value_dates = value_dates or [d.value_date for d in days]
    chosen = chosen_gaps(dec, days, fallback)
    optimal = np.minimum(beta_det, beta_stoch)
    rows = [
        {
            "value_date": vd.isoformat(),
            "output": float(o),
            "decision": Decision(int(c)).label,
            "best": int(b),
            "beta_det": float(bd),
            "beta_stoch": float(bs),
        }
        for vd, o, c, b, bd, bs in zip(value_dates, outputs, dec, best, beta_det, beta_stoch)
    ]
    return EvaluationReport(
        accuracy=accuracy(dec, best),
        delta_realistic=realistic_gap(dec, days, fallback),
        classified_fraction=float(np.mean(dec != Decision.UNCLASSIFIED)),
        mean_gap_chosen=float(np.mean(chosen)),
        mean_gap_optimal=float(np.mean(optimal)),
        decisions=rows,
    )


def baselines(days, p=None, seed=0) -> dict:
    """Accuracy and realistic gap of static and random strategies.

    ``p`` is the probability of picking stochastic in the binomial baseline;
    it defaults to the stochastic share of ``days`` (pass the training share
    to avoid peeking at test labels).
    """
    if hasattr(days, "best"):
        best = np.asarray(days.best, dtype=int)
    else:
        best = np.array([d.best for d in days], dtype=int)
    if best.size == 0:
        raise ValidationError("baselines need at least one day", field="days")
    if p is None:
        p = float(np.mean(best == Decision.STOCHASTIC))
    if not 0.0 <= p <= 1.0:
        raise ValidationError("binomial probability must lie in [0, 1]", field="p")
    rng = np.random.default_rng(seed)
    draws = np.where(rng.random(best.size) < p, int(Decision.STOCHASTIC), int(Decision.DETERMINISTIC))
    candidates = {
        "always_stochastic": np.full(best.size, int(Decision.STOCHASTIC)),
        "always_deterministic": np.full(best.size, int(Decision.DETERMINISTIC)),
        "binomial": draws,
    }
    out = {}
    for name, dec in candidates.items():
        out[name] = {"accuracy": accuracy(dec, best), "delta_realistic": realistic_gap(dec, days)}
    out["binomial"]["p_stochastic"] = p
    return out
