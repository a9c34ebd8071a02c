"""Synthetic volume panels with known rebalancing spikes."""

from __future__ import annotations

import datetime as dt

import numpy as np

from .features import MetaTable, PanelSeries, RebalanceCalendar, StockMeta, business_days_after


def third_fridays(start: dt.date, end: dt.date) -> list[dt.date]:
    out = []
    year, month = start.year, start.month
    while dt.date(year, month, 1) <= end:
        first = dt.date(year, month, 1)
        friday = first + dt.timedelta(days=(4 - first.weekday()) % 7 + 14)
        if start <= friday <= end:
            out.append(friday)
        year, month = (year + 1, 1) if month == 12 else (year, month + 1)
    return out


def spike_panel(
    n_tickers: int = 2,
    n_days: int = 600,
    phi: float = 0.6,
    spike: float = 3.0,
    noise: float = 1.0,
    level: float = 10.0,
    seed: int = 0,
    start: dt.date = dt.date(2021, 1, 4),
    missing_rate: float = 0.0,
) -> tuple[PanelSeries, MetaTable, RebalanceCalendar]:
    """AR(1) panel with an additive spike on every monthly rebalancing day.

    ``y_t = phi * y_{t-1} + noise * e_t + spike * 1[t is a rebalancing day]``,
    shifted by ``level``. Rebalancing happens on the third Friday of each
    month; trading days are all weekdays.
    """
    rng = np.random.default_rng(seed)
    dates = business_days_after(start - dt.timedelta(days=1), n_days)
    rebal = third_fridays(dates[0], dates[-1])
    is_rb = np.isin(np.array(dates, dtype="datetime64[D]"), np.array(rebal, dtype="datetime64[D]"))
    y = np.zeros((n_tickers, n_days))
    prev = np.zeros(n_tickers)
    for t in range(n_days):
        prev = phi * prev + noise * rng.standard_normal(n_tickers) + spike * is_rb[t]
        y[:, t] = prev
    mask = rng.random((n_tickers, n_days)) < missing_rate
    tickers = [f"SYN{i}" for i in range(n_tickers)]
    stocks = {t: StockMeta(t, i % 10, i % 7) for i, t in enumerate(tickers)}
    meta = MetaTable(
        stocks,
        [f"sector{i}" for i in range(min(n_tickers, 10))],
        [f"location{i}" for i in range(min(n_tickers, 7))],
    )
    values = np.where(mask, 0.0, y + level)
    return PanelSeries(dates, tickers, values, mask), meta, RebalanceCalendar.of(rebal)
