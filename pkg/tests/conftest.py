import datetime as dt

import numpy as np
import pytest

from bidselect import dataset, synth

WORKED_DAYS = [
    # issue date, value date, beta_det, beta_stoch, strategy gap, best
    (dt.date(2017, 7, 1), dt.date(2017, 7, 2), 69.2, 137.9, 68.7, 1),
    (dt.date(2017, 7, 2), dt.date(2017, 7, 3), 16.5, 65.1, 48.6, 1),
    (dt.date(2017, 7, 3), dt.date(2017, 7, 4), 31.1, 29.9, -1.2, 0),
]


def make_record(beta_det=10.0, beta_stoch=20.0, issue=dt.date(2017, 1, 1), **overrides):
    values = dict(
        issue_date=issue,
        value_date=issue + dt.timedelta(days=1),
        inflow_deviation=1.0,
        reservoir_filling_1=0.5,
        reservoir_filling_2=0.5,
        price_volatility=3.0,
        prognosis_volatility=2.5,
        water_value=30.0,
        average_price=35.0,
        average_price_prognosis=34.0,
        hourly_prices=[35.0 + h for h in range(24)],
        hourly_prognosis=[34.0 + h for h in range(24)],
        beta_det=beta_det,
        beta_stoch=beta_stoch,
    )
    values.update(overrides)
    return dataset.DailyRecord(**values)


def worked_days():
    return [dataset.label_day(make_record(bd, bs, issue)) for issue, _, bd, bs, _, _ in WORKED_DAYS]


@pytest.fixture(scope="session")
def synth_small():
    """400 synthetic days with curves and ground truth."""
    return synth.generate(synth.SynthConfig(n_days=400, seed=7))


@pytest.fixture(scope="session")
def synth_files(tmp_path_factory, synth_small):
    from bidselect import curves

    records, curve_sets, truth = synth_small
    root = tmp_path_factory.mktemp("synth")
    dataset.write_records(records, root / "days.csv")
    curves.write_curves(curve_sets, root / "curves.csv")
    return root


def random_monotone_pair(rng, n_points=4):
    """Random piecewise-linear bid/ask curves (off-grid break points) that cross."""
    from bidselect.curves import MarketCurve

    lo, hi = rng.uniform(-20.0, 20.0), rng.uniform(150.0, 300.0)

    def prices():
        inner = np.sort(rng.uniform(lo, hi, n_points - 2))
        return np.concatenate([[lo + rng.uniform(0, 5)], inner, [hi - rng.uniform(0, 5)]])

    bp, ap = np.unique(prices()), np.unique(prices())
    bid = rng.uniform(2000.0, 4000.0) - np.concatenate([[0.0], np.cumsum(rng.uniform(0, 800, len(bp) - 1))])
    ask = rng.uniform(0.0, 1500.0) + np.concatenate([[0.0], np.cumsum(rng.uniform(0, 800, len(ap) - 1))])
    # force a sign change: bid above ask at the low end, below at the high end
    ask = ask - max(0.0, ask[0] - bid[0] + 100.0)
    ask = np.maximum(ask, 0.0)
    top = bid[-1] + 100.0
    if ask[-1] < top:
        ask[-1] = top
    return MarketCurve("bid", bp.tolist(), np.maximum(bid, 0.0).tolist()), MarketCurve("ask", ap.tolist(), ask.tolist())


def brute_force_crossing(bid, ask, step=0.001):
    """First price on a fine grid where bid volume <= ask volume."""
    lo = min(bid.prices[0], ask.prices[0])
    hi = max(bid.prices[-1], ask.prices[-1])
    grid = np.arange(lo, hi + step, step)
    diff = np.interp(grid, bid.prices, bid.volumes) - np.interp(grid, ask.prices, ask.volumes)
    return float(grid[np.flatnonzero(diff <= 0)[0]])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
