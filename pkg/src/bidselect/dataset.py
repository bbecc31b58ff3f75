"""Daily bidding-performance records, labels and train/test splits."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

HOURS = 24

SCALAR_FIELDS = (
    "inflow_deviation",
    "reservoir_filling_1",
    "reservoir_filling_2",
    "price_volatility",
    "prognosis_volatility",
    "water_value",
    "average_price",
    "average_price_prognosis",
)
PRICE_COLUMNS = tuple(f"p_{h}" for h in range(1, HOURS + 1))
PROGNOSIS_COLUMNS = tuple(f"p_prog{h}" for h in range(1, HOURS + 1))
CSV_HEADER = (
    ("issue_date", "value_date")
    + SCALAR_FIELDS
    + PRICE_COLUMNS
    + PROGNOSIS_COLUMNS
    + ("beta_det", "beta_stoch")
)

STOCHASTIC = 0
DETERMINISTIC = 1


@dataclass(frozen=True)
class DailyRecord:
    """One issue/value-date pair.

    ``beta_det`` and ``beta_stoch`` are the losses (EUR/day) of each strategy
    against the perfect-foresight schedule, so both are non-negative.
    """

    issue_date: dt.date
    value_date: dt.date
    inflow_deviation: float
    reservoir_filling_1: float
    reservoir_filling_2: float
    price_volatility: float
    prognosis_volatility: float
    water_value: float
    average_price: float
    average_price_prognosis: float
    hourly_prices: tuple
    hourly_prognosis: tuple
    beta_det: float
    beta_stoch: float

    def __post_init__(self):
        object.__setattr__(self, "hourly_prices", tuple(float(v) for v in self.hourly_prices))
        object.__setattr__(self, "hourly_prognosis", tuple(float(v) for v in self.hourly_prognosis))
        self.validate()

    def validate(self):
        if self.value_date != self.issue_date + dt.timedelta(days=1):
            raise ValidationError(
                f"value_date {self.value_date} must be issue_date {self.issue_date} + 1 day",
                field="value_date",
            )
        for name in ("hourly_prices", "hourly_prognosis"):
            values = getattr(self, name)
            if len(values) != HOURS:
                raise ValidationError(f"{name} has {len(values)} entries, expected {HOURS}", field=name)
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"{name} contains non-finite values", field=name)
        for name in SCALAR_FIELDS + ("beta_det", "beta_stoch"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} is not finite", field=name)
        for name in ("beta_det", "beta_stoch"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}", field=name)
        for name in ("reservoir_filling_1", "reservoir_filling_2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {getattr(self, name)}", field=name)


@dataclass(frozen=True)
class LabeledDay:
    record: DailyRecord
    strategy_gap: float
    best: int
    min_gap: float

    @property
    def value_date(self):
        return self.record.value_date


def label_day(record: DailyRecord) -> LabeledDay:
    """Attach strategy gap, best-strategy label and minimum gap.

    Ties label as stochastic.
    """
    record.validate()
    gap = record.beta_stoch - record.beta_det
    best = DETERMINISTIC if record.beta_det < record.beta_stoch else STOCHASTIC
    return LabeledDay(
        record=record,
        strategy_gap=gap,
        best=best,
        min_gap=min(record.beta_det, record.beta_stoch),
    )


def label_days(records: Sequence[DailyRecord]) -> list[LabeledDay]:
    return [label_day(r) for r in records]


# -- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    kind: str = "random"
    train_fraction: float = 0.67
    seed: int = 0
    train_years: tuple = field(default_factory=tuple)
    test_years: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("random", "sequential"):
            raise ValidationError(f"unknown split kind {self.kind!r}", field="kind")
        if self.kind == "random" and not 0.0 <= self.train_fraction <= 1.0:
            raise ValidationError("train_fraction must lie in [0, 1]", field="train_fraction")
        if self.kind == "sequential":
            if not self.train_years or not self.test_years:
                raise ValidationError("sequential split needs train_years and test_years", field="train_years")
            overlap = set(self.train_years) & set(self.test_years)
            if overlap:
                raise ValidationError(f"years {sorted(overlap)} in both train and test", field="test_years")

    def to_dict(self):
        return {
            "kind": self.kind,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "train_years": list(self.train_years),
            "test_years": list(self.test_years),
        }


def split_indices(value_dates: Sequence[dt.date], plan: SplitPlan) -> tuple[np.ndarray, np.ndarray]:
    """Return (train, test) row indices, each in ascending (input) order."""
    n = len(value_dates)
    if plan.kind == "random":
        n_train = int(round(plan.train_fraction * n))
        if n_train == 0 or n_train == n:
            raise ValidationError(
                f"train_fraction {plan.train_fraction} on {n} days leaves an empty side",
                field="train_fraction",
            )
        perm = np.random.default_rng(plan.seed).permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])

    years = np.array([d.year for d in value_dates], dtype=int)
    present = set(years.tolist())
    for y in tuple(plan.train_years) + tuple(plan.test_years):
        if y not in present:
            raise ValidationError(f"year {y} not present in data", field="years")
    unassigned = present - set(plan.train_years) - set(plan.test_years)
    if unassigned:
        raise ValidationError(f"years {sorted(unassigned)} are in neither train nor test", field="years")
    train = np.flatnonzero(np.isin(years, list(plan.train_years)))
    test = np.flatnonzero(np.isin(years, list(plan.test_years)))
    return train, test


def split(days: Sequence[LabeledDay], plan: SplitPlan) -> tuple[list[LabeledDay], list[LabeledDay]]:
    if plan.kind == "sequential":
        order = sorted(range(len(days)), key=lambda i: days[i].value_date)
        days = [days[i] for i in order]
    train, test = split_indices([d.value_date for d in days], plan)
    return [days[i] for i in train], [days[i] for i in test]


# -- CSV ingestion -----------------------------------------------------------


def _parse_date(text, line, column):
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ValidationError(
            f"line {line}, column {column}: invalid ISO date {text!r}", field=column, row=line
        ) from None


def _parse_float(text, line, column):
    if text is None or text.strip() == "":
        raise ValidationError(f"line {line}, column {column}: missing value", field=column, row=line)
    try:
        return float(text)
    except ValueError:
        raise ValidationError(
            f"line {line}, column {column}: cannot parse {text!r} as a number", field=column, row=line
        ) from None


def _data_lines(handle):
    # yields (physical line number, text); '#' lines carry provenance only
    for lineno, text in enumerate(handle, start=1):
        if text.startswith("#") or not text.strip():
            continue
        yield lineno, text


def load_records(path, format="csv") -> list[DailyRecord]:
    """Read ``days.csv``; one :class:`DailyRecord` per data row."""
    if format != "csv":
        raise ValidationError(f"unsupported format {format!r}", field="format")
    path = Path(path)
    with path.open(newline="") as handle:
        lines = list(_data_lines(handle))
    if not lines:
        return []
    linenos = [n for n, _ in lines]
    reader = csv.reader(text for _, text in lines)
    header = next(reader)
    if tuple(h.strip() for h in header) != CSV_HEADER:
        missing = [c for c in CSV_HEADER if c not in header]
        raise ValidationError(
            f"line {linenos[0]}: unexpected header" + (f" (missing {missing})" if missing else ""),
            field="header",
            row=linenos[0],
        )
    records = []
    seen = {}
    for lineno, row in zip(linenos[1:], reader):
        if len(row) != len(CSV_HEADER):
            raise ValidationError(
                f"line {lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}", row=lineno
            )
        values = dict(zip(CSV_HEADER, row))
        issue = _parse_date(values["issue_date"], lineno, "issue_date")
        value = _parse_date(values["value_date"], lineno, "value_date")
        kwargs = {name: _parse_float(values[name], lineno, name) for name in SCALAR_FIELDS}
        try:
            rec = DailyRecord(
                issue_date=issue,
                value_date=value,
                hourly_prices=[_parse_float(values[c], lineno, c) for c in PRICE_COLUMNS],
                hourly_prognosis=[_parse_float(values[c], lineno, c) for c in PROGNOSIS_COLUMNS],
                beta_det=_parse_float(values["beta_det"], lineno, "beta_det"),
                beta_stoch=_parse_float(values["beta_stoch"], lineno, "beta_stoch"),
                **kwargs,
            )
        except ValidationError as exc:
            if exc.row is not None:
                raise
            raise ValidationError(f"line {lineno}: {exc}", field=exc.field, row=lineno) from None
        if value in seen:
            raise ValidationError(
                f"line {lineno}: duplicate value_date {value} (first seen on line {seen[value]})",
                field="value_date",
                row=lineno,
            )
        seen[value] = lineno
        records.append(rec)
    return records


def write_records(records: Sequence[DailyRecord], path, comment=None):
    with Path(path).open("w", newline="") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(
                [r.issue_date.isoformat(), r.value_date.isoformat()]
                + [repr(float(getattr(r, name))) for name in SCALAR_FIELDS]
                + [repr(v) for v in r.hourly_prices]
                + [repr(v) for v in r.hourly_prognosis]
                + [repr(float(r.beta_det)), repr(float(r.beta_stoch))]
            )
