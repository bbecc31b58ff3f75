"""Feature matrices (simple 8-column and complex 113-column sets) and scaling."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import curves as curves_mod
from .dataset import PRICE_COLUMNS, PROGNOSIS_COLUMNS, SCALAR_FIELDS, LabeledDay
from .errors import ValidationError

log = logging.getLogger(__name__)

SIMPLE_FEATURES = SCALAR_FIELDS
UP_COLUMNS = tuple(f"bu_{h}" for h in range(1, 25))
DOWN_COLUMNS = tuple(f"bd_{h}" for h in range(1, 25))
EXTRA_COLUMNS = (
    "vol_roll_1",
    "vol_roll_2",
    "month",
    "year",
    "day_of_week",
    "similar_weekday_gap",
    "DELTA_1",
    "reservoir_filling_change",
    "price_minus_water_value",
)
COMPLEX_FEATURES = (
    SIMPLE_FEATURES + PRICE_COLUMNS + PROGNOSIS_COLUMNS + UP_COLUMNS + DOWN_COLUMNS + EXTRA_COLUMNS
)
SIMILAR_WEEKDAY_DEPTH = 4
LABEL_COLUMNS = ("best", "strategy_gap", "beta_det", "beta_stoch")


@dataclass(frozen=True)
class FeatureSpec:
    names: tuple
    set_kind: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValidationError("feature names must be unique", field="names")
        if not self.names:
            raise ValidationError("a feature set needs at least one name", field="names")
        expected = {"simple": len(SIMPLE_FEATURES), "complex": len(COMPLEX_FEATURES)}.get(self.set_kind)
        if expected is not None and len(self.names) != expected:
            raise ValidationError(
                f"{self.set_kind} set must have {expected} features, got {len(self.names)}", field="names"
            )

    @classmethod
    def simple(cls):
        return cls(SIMPLE_FEATURES, "simple")

    @classmethod
    def complex(cls):
        return cls(COMPLEX_FEATURES, "complex")

    @classmethod
    def from_file(cls, path):
        """One feature name per line, or a JSON list."""
        text = Path(path).read_text()
        if text.lstrip().startswith("["):
            names = json.loads(text)
        else:
            names = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        return cls(tuple(names), "custom")


@dataclass
class FeatureMatrix:
    """Feature rows aligned by value date, with labels and raw gaps attached."""

    names: list
    X: np.ndarray
    value_dates: list
    best: np.ndarray
    strategy_gap: np.ndarray
    beta_det: np.ndarray
    beta_stoch: np.ndarray
    set_kind: str = "custom"
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.names = list(self.names)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.value_dates), len(self.names))
        for name in ("best", "strategy_gap", "beta_det", "beta_stoch"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (len(self.value_dates),):
                raise ValidationError(f"{name} does not align with rows", field=name)
            setattr(self, name, arr)
        if not np.all(np.isfinite(self.X)):
            bad = sorted({self.names[j] for j in np.argwhere(~np.isfinite(self.X))[:, 1]})
            raise ValidationError(f"non-finite feature values in {bad}", field="X")

    def __len__(self):
        return len(self.value_dates)

    @property
    def spec(self):
        return FeatureSpec(tuple(self.names), self.set_kind)

    @property
    def min_gap(self):
        return np.minimum(self.beta_det, self.beta_stoch)

    @property
    def years(self):
        return np.array([d.year for d in self.value_dates], dtype=int)

    def take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(
            self.names,
            self.X[idx],
            [self.value_dates[i] for i in idx],
            self.best[idx],
            self.strategy_gap[idx],
            self.beta_det[idx],
            self.beta_stoch[idx],
            self.set_kind,
            dict(self.notes),
        )

    def select(self, names):
        names = list(names)
        missing = [n for n in names if n not in self.names]
        if missing:
            raise ValidationError(f"unknown features {missing}", field="names")
        cols = [self.names.index(n) for n in names]
        kind = self.set_kind if names == self.names else "custom"
        return FeatureMatrix(
            names, self.X[:, cols], self.value_dates, self.best, self.strategy_gap,
            self.beta_det, self.beta_stoch, kind, dict(self.notes),
        )

    def with_columns(self, names, values):
        values = np.asarray(values, dtype=float).reshape(len(self), len(names))
        return FeatureMatrix(
            self.names + list(names), np.hstack([self.X, values]), self.value_dates, self.best,
            self.strategy_gap, self.beta_det, self.beta_stoch, "custom", dict(self.notes),
        )

    def replace_X(self, X, names=None):
        return FeatureMatrix(
            list(names or self.names), X, self.value_dates, self.best, self.strategy_gap,
            self.beta_det, self.beta_stoch, self.set_kind, dict(self.notes),
        )

    def to_csv(self, path, comment=None):
        with Path(path).open("w", newline="") as handle:
            if comment:
                handle.write(f"# {comment}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["value_date", *self.names, *LABEL_COLUMNS])
            for i, d in enumerate(self.value_dates):
                writer.writerow(
                    [d.isoformat()]
                    + [repr(float(v)) for v in self.X[i]]
                    + [int(self.best[i])]
                    + [repr(float(getattr(self, c)[i])) for c in LABEL_COLUMNS[1:]]
                )

    @classmethod
    def from_csv(cls, path, set_kind="custom"):
        with Path(path).open(newline="") as handle:
            rows = list(csv.reader(ln for ln in handle if ln.strip() and not ln.startswith("#")))
        header, body = rows[0], rows[1:]
        names = header[1 : -len(LABEL_COLUMNS)]
        data = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header) - 1)
        p = len(names)
        return cls(
            names,
            data[:, :p],
            [dt.date.fromisoformat(r[0]) for r in body],
            data[:, p].astype(int),
            data[:, p + 1],
            data[:, p + 2],
            data[:, p + 3],
            set_kind,
        )


def _labels(days):
    return dict(
        best=np.array([d.best for d in days], dtype=int),
        strategy_gap=np.array([d.strategy_gap for d in days], dtype=float),
        beta_det=np.array([d.record.beta_det for d in days], dtype=float),
        beta_stoch=np.array([d.record.beta_stoch for d in days], dtype=float),
    )


def _sorted(days):
    return sorted(days, key=lambda d: d.value_date)


def _simple_row(rec):
    return [getattr(rec, name) for name in SIMPLE_FEATURES]


def build_simple(days: Sequence[LabeledDay]) -> FeatureMatrix:
    """The eight daily input variables, unscaled."""
    if not days:
        raise ValidationError("build_simple needs at least one day", field="days")
    days = _sorted(days)
    X = np.array([_simple_row(d.record) for d in days], dtype=float)
    return FeatureMatrix(
        list(SIMPLE_FEATURES), X, [d.value_date for d in days], set_kind="simple", **_labels(days)
    )


def build_complex(days: Sequence[LabeledDay], curve_features: dict) -> FeatureMatrix:
    """The 113-column set.

    ``curve_features`` maps a curve date to its (24, 2) array of (up, down)
    shift sensitivities.  Hourly sensitivities come from the issue date's
    curves; ``vol_roll_1`` / ``vol_roll_2`` are the pooled volatility of the
    one and two days before the issue date.  Rows whose lag context precedes
    the available history are dropped.
    """
    if not days:
        raise ValidationError("build_complex needs at least one day", field="days")
    days = _sorted(days)
    by_date = {d.value_date: d for d in days}
    first_curve = min(curve_features) if curve_features else None
    one = dt.timedelta(days=1)

    def lagged_sensitivities(date):
        if date in curve_features:
            return curves_mod.as_array(curve_features[date])
        if first_curve is None or date < first_curve:
            return None
        raise ValidationError(f"missing curve features for {date}", field="curves")

    rows, kept, dropped = [], [], []
    for day in days:
        d = day.value_date
        issue = day.record.issue_date
        if issue not in curve_features:
            raise ValidationError(f"missing curve features for issue date {issue}", field="curves")
        prev = by_date.get(d - one)
        lag1 = lagged_sensitivities(issue - one)
        lag2 = lagged_sensitivities(issue - 2 * one)
        if prev is None or lag1 is None or lag2 is None:
            dropped.append(d)
            continue
        sens = curves_mod.as_array(curve_features[issue])
        rec = day.record
        same_weekday = [
            by_date[d - 7 * k * one].strategy_gap
            for k in range(1, SIMILAR_WEEKDAY_DEPTH + 1)
            if d - 7 * k * one in by_date
        ]
        if not same_weekday:
            same_weekday = [p.strategy_gap for p in days if p.value_date < d]
        row = (
            _simple_row(rec)
            + list(rec.hourly_prices)
            + list(rec.hourly_prognosis)
            + sens[:, 0].tolist()
            + sens[:, 1].tolist()
            + [
                curves_mod.rolling_volatility(lag1),
                curves_mod.rolling_volatility(lag2),
                d.month,
                d.year,
                d.weekday(),
                float(np.mean(same_weekday)),
                prev.strategy_gap,
                rec.reservoir_filling_2 - prev.record.reservoir_filling_2,
                rec.average_price - rec.water_value,
            ]
        )
        rows.append(row)
        kept.append(day)
    if not kept:
        raise ValidationError("no day has the lag history the complex set needs", field="days")
    X = np.array(rows, dtype=float)
    return FeatureMatrix(
        list(COMPLEX_FEATURES),
        X,
        [d.value_date for d in kept],
        set_kind="complex",
        notes={"dropped_for_lags": [d.isoformat() for d in dropped]},
        **_labels(kept),
    )


# -- scaling -----------------------------------------------------------------

SCALING_MODES = ("per_year", "rolling_365", "global")
ROLLING_WINDOW_DAYS = 365
ROLLING_MIN_HISTORY = 30


@dataclass
class ScalingStats:
    """Mean/std per feature for each scaling group.

    Group keys are ``"all"`` (global), the calendar year (per_year) or the
    ISO value date (rolling_365).  ``warmup`` lists rolling dates with too
    little history to be scaled.
    """

    mode: str
    names: list
    dropped: list
    groups: dict
    warmup: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mode": self.mode,
            "names": list(self.names),
            "dropped": list(self.dropped),
            "warmup": list(self.warmup),
            "groups": {k: {"mean": m.tolist(), "std": s.tolist()} for k, (m, s) in sorted(self.groups.items())},
        }

    @classmethod
    def from_dict(cls, data):
        groups = {k: (np.array(v["mean"]), np.array(v["std"])) for k, v in data["groups"].items()}
        return cls(data["mode"], list(data["names"]), list(data["dropped"]), groups, list(data.get("warmup", [])))

    def save(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _group_key(mode, date):
    if mode == "global":
        return "all"
    if mode == "per_year":
        return str(date.year)
    return date.isoformat()


def fit_scaling(train: FeatureMatrix, mode="per_year", min_history=ROLLING_MIN_HISTORY) -> ScalingStats:
    """Standard-scaling statistics (population std) per group.

    Features with zero variance in any group are dropped and listed in
    ``ScalingStats.dropped``.
    """
    if mode not in SCALING_MODES:
        raise ValidationError(f"unknown scaling mode {mode!r}", field="mode")
    X = train.X
    raw = {}
    warmup = []
    if mode == "global":
        raw["all"] = (X.mean(axis=0), X.std(axis=0))
    elif mode == "per_year":
        years = train.years
        for y in sorted(set(years.tolist())):
            block = X[years == y]
            if len(block) < 2:
                raise ValidationError(f"per_year scaling needs >= 2 days in {y}", field="mode")
            raw[str(y)] = (block.mean(axis=0), block.std(axis=0))
    else:
        order = np.argsort(np.array(train.value_dates, dtype="datetime64[D]"), kind="stable")
        dates = np.array(train.value_dates, dtype="datetime64[D]")[order]
        Xs = X[order]
        lo = np.searchsorted(dates, dates - np.timedelta64(ROLLING_WINDOW_DAYS, "D"), side="left")
        hi = np.searchsorted(dates, dates, side="left")
        for i, d in enumerate(dates):
            key = str(d)
            if hi[i] - lo[i] < min_history:
                warmup.append(key)
                continue
            block = Xs[lo[i] : hi[i]]
            raw[key] = (block.mean(axis=0), block.std(axis=0))
    if not raw:
        raise ValidationError("no scaling group has enough history", field="mode")
    stds = np.array([s for _, s in raw.values()])
    keep = np.all(stds > 0, axis=0)
    dropped = [n for n, k in zip(train.names, keep) if not k]
    if dropped:
        log.info("scaling drops zero-variance features: %s", dropped)
    groups = {k: (m[keep], s[keep]) for k, (m, s) in raw.items()}
    return ScalingStats(mode, [n for n, k in zip(train.names, keep) if k], dropped, groups, warmup)


def _row_groups(matrix, stats):
    keys = [_group_key(stats.mode, d) for d in matrix.value_dates]
    warm = set(stats.warmup)
    rows, used = [], []
    for i, key in enumerate(keys):
        if key in stats.groups:
            rows.append(i)
            used.append(key)
        elif stats.mode == "rolling_365" and key in warm:
            continue
        elif stats.mode == "per_year":
            raise ValidationError(
                f"year {key} was not seen when fitting per_year scaling; use rolling_365 for unseen years",
                field="mode",
            )
        else:
            raise ValidationError(f"no scaling statistics for {key}", field="mode")
    return np.array(rows, dtype=int), used


def apply_scaling(matrix: FeatureMatrix, stats: ScalingStats) -> FeatureMatrix:
    """x -> (x - mean) / std per feature and group; labels untouched.

    Rolling warm-up rows are dropped.
    """
    rows, keys = _row_groups(matrix, stats)
    sub = matrix.select(stats.names).take(rows) if len(rows) != len(matrix) else matrix.select(stats.names)
    mean = np.array([stats.groups[k][0] for k in keys]).reshape(len(rows), len(stats.names))
    std = np.array([stats.groups[k][1] for k in keys]).reshape(len(rows), len(stats.names))
    out = sub.replace_X((sub.X - mean) / std)
    out.set_kind = matrix.set_kind if not stats.dropped else "custom"
    if len(rows) != len(matrix):
        out.notes["dropped_for_warmup"] = len(matrix) - len(rows)
    return out


def invert_scaling(matrix: FeatureMatrix, stats: ScalingStats) -> FeatureMatrix:
    rows, keys = _row_groups(matrix, stats)
    if len(rows) != len(matrix) or list(matrix.names) != list(stats.names):
        raise ValidationError("matrix does not match the scaling statistics", field="names")
    mean = np.array([stats.groups[k][0] for k in keys]).reshape(len(rows), len(stats.names))
    std = np.array([stats.groups[k][1] for k in keys]).reshape(len(rows), len(stats.names))
    return matrix.replace_X(matrix.X * std + mean)
