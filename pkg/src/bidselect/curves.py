"""Aggregated bid/ask curves: equilibrium price, shift sensitivities, volatility.

Curves are densified onto a price grid with 0.1 EUR/MWh spacing.  Grid
points are identified by integer indices ``k`` (price ``k / 10``) so that two
curves can be aligned exactly.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NoCrossingError, ValidationError

GRID_STEP = 0.1
GRID_PER_UNIT = 10  # grid points per EUR/MWh
DEFAULT_SHIFT_MW = 1000.0
SIDES = ("bid", "ask")


@dataclass(frozen=True)
class MarketCurve:
    """Monotone price/volume curve for one hour.

    ``bid`` is the demand side (volume non-increasing in price), ``ask`` the
    supply side (volume non-decreasing in price).
    """

    side: str
    prices: tuple
    volumes: tuple

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValidationError(f"unknown curve side {self.side!r}", field="side")
        prices = tuple(float(p) for p in self.prices)
        volumes = tuple(float(v) for v in self.volumes)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "volumes", volumes)
        if len(prices) != len(volumes):
            raise ValidationError("prices and volumes differ in length", field="points")
        if len(prices) < 2:
            raise ValidationError("a curve needs at least 2 points", field="points")
        if not all(math.isfinite(v) for v in prices + volumes):
            raise ValidationError("curve points must be finite", field="points")
        dp = np.diff(prices)
        if np.any(dp <= 0):
            raise ValidationError("curve prices must be strictly increasing", field="prices")
        dv = np.diff(volumes)
        if self.side == "bid" and np.any(dv > 0):
            raise ValidationError("bid volume must be non-increasing in price", field="volumes")
        if self.side == "ask" and np.any(dv < 0):
            raise ValidationError("ask volume must be non-decreasing in price", field="volumes")

    @classmethod
    def from_points(cls, side, points):
        points = list(points)
        return cls(side, [p for p, _ in points], [v for _, v in points])

    @property
    def points(self):
        return list(zip(self.prices, self.volumes))

    def volume_at(self, price):
        """Piecewise-linear volume, flat beyond the end points."""
        return np.interp(price, self.prices, self.volumes)


@dataclass(frozen=True)
class DenseCurve:
    side: str
    start_index: int
    volumes: np.ndarray

    @property
    def grid_start(self):
        return self.start_index / GRID_PER_UNIT

    @property
    def grid_step(self):
        return GRID_STEP

    @property
    def end_index(self):
        return self.start_index + len(self.volumes) - 1

    def prices(self):
        return np.arange(self.start_index, self.end_index + 1) / GRID_PER_UNIT

    def on_grid(self, start_index, end_index):
        """Volumes on ``[start_index, end_index]``, flat outside the own grid."""
        lo = self.start_index - start_index
        hi = end_index - self.end_index
        if lo < 0 or hi < 0:
            raise ValueError("target grid must contain the curve's grid")
        return np.pad(self.volumes, (lo, hi), mode="edge")

    def shifted(self, shift):
        """Horizontal volume translation, clipped at zero volume."""
        return DenseCurve(self.side, self.start_index, np.maximum(self.volumes + shift, 0.0))


@dataclass(frozen=True)
class SensitivityPair:
    up: float
    down: float


def _grid_bounds(prices):
    lo = math.floor(prices[0] * GRID_PER_UNIT + 1e-9)
    hi = math.ceil(prices[-1] * GRID_PER_UNIT - 1e-9)
    return lo, hi


def densify(curve: MarketCurve, start_index=None, end_index=None) -> DenseCurve:
    """Linear interpolation of volume at every 0.1 EUR/MWh grid price."""
    if not isinstance(curve, MarketCurve):
        curve = MarketCurve.from_points(*curve)
    lo, hi = _grid_bounds(curve.prices)
    if start_index is not None:
        lo = min(lo, start_index)
    if end_index is not None:
        hi = max(hi, end_index)
    grid = np.arange(lo, hi + 1) / GRID_PER_UNIT
    volumes = np.interp(grid, curve.prices, curve.volumes)
    return DenseCurve(curve.side, lo, volumes)


def _crossing(bid_v, ask_v, start_index):
    diff = bid_v - ask_v
    if diff[0] <= 0:
        raise NoCrossingError(
            f"bid volume does not exceed ask volume at grid start {start_index / GRID_PER_UNIT} EUR/MWh",
            side="below",
        )
    nonpos = np.flatnonzero(diff <= 0)
    if nonpos.size == 0:
        raise NoCrossingError(
            "bid volume exceeds ask volume over the whole price grid", side="above"
        )
    i = int(nonpos[0])
    d0, d1 = diff[i - 1], diff[i]
    frac = d0 / (d0 - d1)
    price = (start_index + i - 1 + frac) / GRID_PER_UNIT
    volume = ask_v[i - 1] + frac * (ask_v[i] - ask_v[i - 1])
    return float(price), float(volume)


def _aligned(bid: DenseCurve, ask: DenseCurve):
    if bid.side != "bid" or ask.side != "ask":
        raise ValidationError("crossing_price expects (bid, ask) curves", field="side")
    lo = min(bid.start_index, ask.start_index)
    hi = max(bid.end_index, ask.end_index)
    return bid.on_grid(lo, hi), ask.on_grid(lo, hi), lo


def crossing_price(bid: DenseCurve, ask: DenseCurve) -> tuple[float, float]:
    """Equilibrium (price, volume) where bid minus ask volume turns non-positive.

    The crossing is located on the shared grid and refined linearly between
    the two bracketing grid points.
    """
    bid_v, ask_v, lo = _aligned(bid, ask)
    return _crossing(bid_v, ask_v, lo)


def shift_sensitivity(bid: DenseCurve, ask: DenseCurve, shift: float) -> float:
    """Price change of the crossing after moving the bid curve by ``shift`` MW."""
    bid_v, ask_v, lo = _aligned(bid, ask)
    try:
        base, _ = _crossing(bid_v, ask_v, lo)
    except NoCrossingError as exc:
        raise NoCrossingError(f"before shift: {exc}", side=f"base/{exc.side}") from None
    if shift == 0:
        return 0.0
    try:
        moved, _ = _crossing(np.maximum(bid_v + shift, 0.0), ask_v, lo)
    except NoCrossingError as exc:
        raise NoCrossingError(
            f"after {shift:+g} MW bid shift: {exc}", side=f"{'up' if shift > 0 else 'down'}/{exc.side}"
        ) from None
    return moved - base


def hour_sensitivity(bid: MarketCurve, ask: MarketCurve, shift=DEFAULT_SHIFT_MW) -> SensitivityPair:
    lo = min(_grid_bounds(bid.prices)[0], _grid_bounds(ask.prices)[0])
    hi = max(_grid_bounds(bid.prices)[1], _grid_bounds(ask.prices)[1])
    b, a = densify(bid, lo, hi), densify(ask, lo, hi)
    return SensitivityPair(up=shift_sensitivity(b, a, shift), down=shift_sensitivity(b, a, -shift))


def as_array(pairs) -> np.ndarray:
    if isinstance(pairs, np.ndarray):
        arr = np.asarray(pairs, dtype=float)
    else:
        arr = np.array([[p.up, p.down] for p in pairs], dtype=float)
    if arr.shape != (24, 2):
        raise ValidationError(f"expected 24 sensitivity pairs, got shape {arr.shape}", field="sensitivities")
    return arr


def rolling_volatility(hourly_sensitivities) -> float:
    """Population std of the 48 pooled up/down sensitivities of one day."""
    return float(np.std(as_array(hourly_sensitivities)))


def day_sensitivities(hour_curves: Sequence, shift=DEFAULT_SHIFT_MW) -> np.ndarray:
    """(24, 2) array of (up, down) sensitivities from 24 (bid, ask) curve pairs."""
    if len(hour_curves) != 24:
        raise ValidationError(f"expected 24 hourly curve pairs, got {len(hour_curves)}", field="hour")
    out = np.empty((24, 2))
    for h, (bid, ask) in enumerate(hour_curves):
        pair = hour_sensitivity(bid, ask, shift)
        out[h] = pair.up, pair.down
    return out


def curve_features(curves_by_date: dict, shift=DEFAULT_SHIFT_MW) -> dict:
    """Map each curve date to its (24, 2) sensitivity array."""
    return {d: day_sensitivities(curves_by_date[d], shift) for d in sorted(curves_by_date)}


# -- CSV ---------------------------------------------------------------------

CURVE_HEADER = ("date", "hour", "side", "price", "volume")


def load_curves(path) -> dict:
    """Read ``curves.csv`` into ``{date: [(bid, ask) for hours 1..24]}``."""
    raw = defaultdict(lambda: defaultdict(lambda: {"bid": [], "ask": []}))
    with Path(path).open(newline="") as handle:
        lines = [(n, t) for n, t in enumerate(handle, start=1) if t.strip() and not t.startswith("#")]
    if not lines:
        return {}
    reader = csv.reader(t for _, t in lines)
    header = tuple(h.strip() for h in next(reader))
    if header != CURVE_HEADER:
        raise ValidationError(f"line {lines[0][0]}: unexpected curves header {header}", field="header")
    for (lineno, _), row in zip(lines[1:], reader):
        if len(row) != 5:
            raise ValidationError(f"line {lineno}: expected 5 columns, got {len(row)}", row=lineno)
        try:
            day = dt.date.fromisoformat(row[0])
            hour = int(row[1])
            price, volume = float(row[3]), float(row[4])
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}", row=lineno) from None
        if not 1 <= hour <= 24:
            raise ValidationError(f"line {lineno}: hour {hour} outside 1..24", field="hour", row=lineno)
        if row[2] not in SIDES:
            raise ValidationError(f"line {lineno}: side {row[2]!r}", field="side", row=lineno)
        raw[day][hour][row[2]].append((price, volume))
    out = {}
    for day in sorted(raw):
        hours = raw[day]
        if sorted(hours) != list(range(1, 25)):
            raise ValidationError(f"curves for {day} do not cover hours 1..24", field="hour")
        pairs = []
        for h in range(1, 25):
            try:
                bid = MarketCurve.from_points("bid", hours[h]["bid"])
                ask = MarketCurve.from_points("ask", hours[h]["ask"])
            except ValidationError as exc:
                raise ValidationError(f"{day} hour {h}: {exc}", field=exc.field) from None
            pairs.append((bid, ask))
        out[day] = pairs
    return out


def write_curves(curves_by_date: dict, path, comment=None):
    with Path(path).open("w", newline="") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for day in sorted(curves_by_date):
            for h, (bid, ask) in enumerate(curves_by_date[day], start=1):
                for curve in (bid, ask):
                    for p, v in curve.points:
                        writer.writerow([day.isoformat(), h, curve.side, repr(p), repr(v)])
