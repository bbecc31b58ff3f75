"""Synthetic daily datasets with a planted, documented strategy-gap rule.

The strategy gap is driven by three simple-set features::

    eta = gap_scale * (f + noise / gap_scale - c) * m
    f   = (1.0 * z(water_value) - 0.7 * z(inflow_deviation) - 0.5 * z(reservoir_filling_2)) / sd
    m   = exp(h * z(inflow)) on stochastic-favoured days, 1 otherwise

High water values favour the deterministic strategy; high inflow and a full
intake reservoir favour the stochastic one.  With ``h > 0`` the stochastic
strategy's advantage is amplified on wet, uncertain days while deterministic
wins stay modest, so the expected gap and the more likely label can disagree.  ``c`` is chosen so that the
realised share of stochastic-best days matches the target exactly.  Curves
are built so that each hour's bid/ask crossing reproduces the hourly price.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .curves import GRID_PER_UNIT, MarketCurve
from .dataset import HOURS, DailyRecord
from .errors import ValidationError

PLANTED = (("water_value", 1.0), ("inflow_deviation", -0.7), ("reservoir_filling_2", -0.5))
START_DATE = dt.date(2016, 1, 1)
PRICE_FLOOR = 1.0
PRICE_CAP = 250.0
CURVE_LOW = -50.0
CURVE_HIGH = 500.0


@dataclass(frozen=True)
class SynthConfig:
    n_days: int = 1000
    seed: int = 0
    signal_strength: float = 0.9
    noise_std: float | None = None  # EUR/day; derived from signal_strength when None
    stochastic_share: float = 0.5
    gap_scale: float = 50.0  # EUR/day per unit of the planted score
    heteroscedasticity: float = 0.0  # log-scale of stochastic-side |eta| per std of inflow deviation
    base_gap_mean: float = 60.0
    supply_slope_range: tuple = (40.0, 400.0)  # MW per EUR/MWh
    supply_base_range: tuple = (8000.0, 15000.0)  # ask volume at 0 EUR/MWh
    demand_slope_range: tuple = (0.2, 0.8)  # share of crossing volume lost up to the price cap
    start_date: dt.date = START_DATE

    def __post_init__(self):
        object.__setattr__(self, "supply_slope_range", tuple(float(x) for x in self.supply_slope_range))
        object.__setattr__(self, "supply_base_range", tuple(float(x) for x in self.supply_base_range))
        object.__setattr__(self, "demand_slope_range", tuple(float(x) for x in self.demand_slope_range))
        if isinstance(self.start_date, str):
            object.__setattr__(self, "start_date", dt.date.fromisoformat(self.start_date))
        if self.n_days < 30:
            raise ValidationError("n_days must be >= 30", field="n_days")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValidationError("signal_strength must lie in [0, 1]", field="signal_strength")
        if self.noise_std is not None and self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0", field="noise_std")
        if self.noise_std is None and self.signal_strength == 0.0:
            raise ValidationError(
                "signal_strength 0 needs an explicit noise_std (the derived noise is unbounded)",
                field="signal_strength",
            )
        if not 0.02 <= self.stochastic_share <= 0.98:
            raise ValidationError("stochastic_share must lie in [0.02, 0.98]", field="stochastic_share")
        if self.gap_scale <= 0 or self.base_gap_mean <= 0:
            raise ValidationError("gap_scale and base_gap_mean must be > 0", field="gap_scale")
        lo, hi = self.supply_slope_range
        if not 0 < lo <= hi:
            raise ValidationError("supply_slope_range must be positive and ordered", field="supply_slope_range")
        lo, hi = self.supply_base_range
        if not 1000.0 < lo <= hi:
            raise ValidationError("supply_base_range must exceed the 1000 MW shift", field="supply_base_range")
        lo, hi = self.demand_slope_range
        if not 0 < lo <= hi < 1:
            raise ValidationError("demand_slope_range must lie in (0, 1)", field="demand_slope_range")

    @property
    def resolved_noise_std(self):
        if self.noise_std is not None:
            return float(self.noise_std)
        s = self.signal_strength
        return self.gap_scale * math.sqrt((1.0 - s) / s)

    def to_dict(self):
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        for k in ("supply_slope_range", "supply_base_range", "demand_slope_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class GroundTruth:
    planted: list  # [(feature, coefficient)] in ranking order
    feature_means: dict
    feature_stds: dict
    score_std: float
    offset: float
    gap_scale: float
    noise_std: float
    heteroscedasticity: float
    signal_strength: float
    stochastic_share_target: float
    stochastic_share_realized: float
    config: dict = field(default_factory=dict)

    @property
    def ranking(self):
        return [name for name, _ in self.planted]

    def clean_gap(self, values: dict):
        """Noise-free strategy gap for raw feature values (arrays or scalars)."""
        z = {n: (np.asarray(values[n], float) - self.feature_means[n]) / self.feature_stds[n] for n, _ in self.planted}
        f = sum(c * z[n] for n, c in self.planted) / self.score_std
        return _gap(self.gap_scale, f, self.offset, self.heteroscedasticity, z["inflow_deviation"])

    def to_dict(self):
        return {
            "planted": [{"feature": n, "coefficient": c} for n, c in self.planted],
            "ranking": self.ranking,
            "feature_means": self.feature_means,
            "feature_stds": self.feature_stds,
            "score_std": self.score_std,
            "offset": self.offset,
            "gap_scale": self.gap_scale,
            "noise_std": self.noise_std,
            "heteroscedasticity": self.heteroscedasticity,
            "signal_strength": self.signal_strength,
            "stochastic_share_target": self.stochastic_share_target,
            "stochastic_share_realized": self.stochastic_share_realized,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            planted=[(p["feature"], p["coefficient"]) for p in data["planted"]],
            **{k: data[k] for k in (
                "feature_means", "feature_stds", "score_std", "offset", "gap_scale", "noise_std",
                "heteroscedasticity", "signal_strength", "stochastic_share_target",
                "stochastic_share_realized", "config",
            )},
        )

    def save(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _ar1(rng, n, phi, sd):
    x = np.empty(n)
    x[0] = rng.normal(0.0, sd / math.sqrt(1 - phi * phi))
    eps = rng.normal(0.0, sd, n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i]
    return x


def _bounded_walk(rng, n, drive, start, lo=0.05, hi=0.95):
    x = np.empty(n)
    x[0] = start
    steps = rng.normal(0.0, 0.01, n) + drive
    for i in range(1, n):
        v = x[i - 1] + steps[i]
        # reflect at the bounds so the walk stays inside (0, 1)
        if v > hi:
            v = 2 * hi - v
        if v < lo:
            v = 2 * lo - v
        x[i] = v
    return x


def _market_state(cfg: SynthConfig, rng):
    """Daily drivers and hourly prices, one extra day for the prognosis."""
    n = cfg.n_days + 1
    dates = [cfg.start_date + dt.timedelta(days=i) for i in range(n)]
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=float)
    years = sorted({d.year for d in dates})
    year_shift = dict(zip(years, rng.normal(0.0, 4.0, len(years))))

    season = np.cos(2 * np.pi * (doy - 15) / 365.25)  # +1 in winter
    wv = 32.0 + 7.0 * season + np.array([year_shift[d.year] for d in dates]) + _ar1(rng, n, 0.95, 0.8)
    spring_flood = np.exp(-(((doy - 140) / 25.0) ** 2))
    inflow = np.exp(0.5 * spring_flood + _ar1(rng, n, 0.9, 0.12))
    inflow = inflow / np.mean(inflow)
    res1 = _bounded_walk(rng, n, 0.004 * (inflow - 1.0), rng.uniform(0.3, 0.7))
    res2 = _bounded_walk(rng, n, 0.0, rng.uniform(0.3, 0.7))

    level = 38.0 + 0.25 * (wv - 32.0) + _ar1(rng, n, 0.8, 3.0)
    hours = np.arange(HOURS)
    shape = 0.18 * np.sin(np.pi * (hours - 6) / 12.0) * (hours >= 6) * (hours <= 22) - 0.08 * (hours < 6)
    amp = rng.uniform(0.5, 1.5, n)
    prices = level[:, None] * (1.0 + amp[:, None] * shape[None, :]) + rng.normal(0.0, 1.5, (n, HOURS))
    prices = np.clip(np.round(prices, 2), PRICE_FLOOR, PRICE_CAP)
    return dates, wv, inflow, res1, res2, prices


def _grid(x):
    return round(x * GRID_PER_UNIT) / GRID_PER_UNIT


def hour_curves(price, rng, cfg: SynthConfig):
    """Monotone (bid, ask) pair whose crossing is exactly ``price``.

    All break points lie on the 0.1 EUR/MWh grid, so densified curves are
    exactly the piecewise-linear ones and the refined crossing is exact.
    """
    inner = np.unique(np.round(rng.uniform(0.5, CURVE_HIGH - 0.5, 13), 1))
    ask_prices = np.concatenate([[CURVE_LOW, 0.0], inner, [CURVE_HIGH]])
    slopes = rng.uniform(*cfg.supply_slope_range, len(ask_prices) - 2)
    base = rng.uniform(*cfg.supply_base_range)
    volumes = [0.0, base]
    for dp, s in zip(np.diff(ask_prices[1:]), slopes):
        volumes.append(volumes[-1] + s * dp)
    volumes[-1] += 20000.0  # ample supply at the price cap keeps shifted crossings on the grid
    ask = MarketCurve("ask", [float(p) for p in ask_prices], [float(v) for v in volumes])

    at_price = float(np.interp(price, ask.prices, ask.volumes))
    u = rng.uniform(*cfg.demand_slope_range)
    slope = u * at_price / (CURVE_HIGH - price)
    bid = MarketCurve(
        "bid",
        [CURVE_LOW, CURVE_HIGH],
        [at_price + slope * (price - CURVE_LOW), at_price - slope * (CURVE_HIGH - price)],
    )
    return bid, ask


def _offset_for_share(score, share):
    """Offset so that exactly round(share * n) scores fall at or below it."""
    s = np.sort(score)
    k = int(round(share * len(s)))
    k = min(max(k, 1), len(s) - 1)
    return 0.5 * (s[k - 1] + s[k])


def _gap(scale, score, offset, h, z_inflow):
    margin = np.asarray(score, float) - offset
    multiplier = np.where(margin <= 0, np.exp(h * np.asarray(z_inflow, float)), 1.0)
    return scale * margin * multiplier


def generate(config: SynthConfig):
    """Return ``(records, curves_by_issue_date, ground_truth)``."""
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    market_seq, gap_seq, curve_seq = root.spawn(3)
    rng = np.random.default_rng(market_seq)
    dates, wv, inflow, res1, res2, prices = _market_state(cfg, rng)
    n = cfg.n_days
    prognosis = np.clip(np.round(prices[1:] + rng.normal(0.0, 2.0, (n, HOURS)), 2), PRICE_FLOOR, PRICE_CAP)

    drivers = {"water_value": wv[:n], "inflow_deviation": inflow[:n], "reservoir_filling_2": res2[:n]}
    means = {k: float(np.mean(v)) for k, v in drivers.items()}
    stds = {k: float(np.std(v)) for k, v in drivers.items()}
    z = {k: (drivers[k] - means[k]) / stds[k] for k in drivers}
    raw = sum(c * z[k] for k, c in PLANTED)
    score_std = float(np.std(raw))
    f = raw / score_std

    grng = np.random.default_rng(gap_seq)
    noise_sd = cfg.resolved_noise_std
    noise = grng.normal(0.0, 1.0, n) * noise_sd
    # the offset is placed on the noisy score so that the label share is exact
    noisy_score = f + noise / cfg.gap_scale
    offset = _offset_for_share(noisy_score, cfg.stochastic_share)
    eta = _gap(cfg.gap_scale, noisy_score, offset, cfg.heteroscedasticity, z["inflow_deviation"])
    stochastic = eta <= 0
    realized = float(np.mean(stochastic))
    if abs(realized - cfg.stochastic_share) > 0.05:
        raise ValidationError("stochastic share unattainable with this noise level", field="stochastic_share")

    base = cfg.base_gap_mean * grng.lognormal(-0.125, 0.5, n)
    beta_det = base + np.maximum(-eta, 0.0)
    beta_stoch = base + np.maximum(eta, 0.0)

    records = []
    for i in range(n):
        records.append(DailyRecord(
            issue_date=dates[i],
            value_date=dates[i + 1],
            inflow_deviation=float(inflow[i]),
            reservoir_filling_1=float(res1[i]),
            reservoir_filling_2=float(res2[i]),
            price_volatility=float(np.std(prices[i])),
            prognosis_volatility=float(np.std(prognosis[i])),
            water_value=float(wv[i]),
            average_price=float(np.mean(prices[i])),
            average_price_prognosis=float(np.mean(prognosis[i])),
            hourly_prices=tuple(float(p) for p in prices[i]),
            hourly_prognosis=tuple(float(p) for p in prognosis[i]),
            beta_det=float(beta_det[i]),
            beta_stoch=float(beta_stoch[i]),
        ))

    curves = {}
    for i, day_seq in enumerate(curve_seq.spawn(n)):
        crng = np.random.default_rng(day_seq)
        curves[dates[i]] = [hour_curves(float(p), crng, cfg) for p in prices[i]]

    truth = GroundTruth(
        planted=list(PLANTED),
        feature_means=means,
        feature_stds=stds,
        score_std=score_std,
        offset=float(offset),
        gap_scale=cfg.gap_scale,
        noise_std=noise_sd,
        heteroscedasticity=cfg.heteroscedasticity,
        signal_strength=cfg.signal_strength,
        stochastic_share_target=cfg.stochastic_share,
        stochastic_share_realized=realized,
        config=cfg.to_dict(),
    )
    return records, curves, truth
