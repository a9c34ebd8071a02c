"""Panel ingestion and conditioning features.

Advanced-information features (sector, location, day-of-week and the
rebalancing markers) are functions of the calendar and static metadata only,
so they can be produced for any future date. Ordinary features are lagged
observations.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .errors import (
    CalendarError,
    CalendarWarning,
    DataError,
    DegenerateSeriesError,
    LoadError,
    MetadataError,
)

logger = logging.getLogger(__name__)

N_SECTORS = 10
N_LOCATIONS = 7
N_DOW = 5
N_RB = 3

ModelKind = Literal["univariate", "multivariate"]


@dataclass
class PanelSeries:
    dates: list[dt.date]
    tickers: list[str]
    values: np.ndarray
    missing_mask: np.ndarray
    norm_stats: dict[str, tuple[float, float]] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        shape = (len(self.tickers), len(self.dates))
        if self.values.shape != shape or self.missing_mask.shape != shape:
            raise DataError(f"panel arrays must be {shape}, got {self.values.shape}")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("panel dates must be strictly increasing")

    def series(self, ticker: str) -> tuple[list[dt.date], np.ndarray]:
        """Dates and values of one ticker with its missing days removed."""
        i = self.tickers.index(ticker)
        keep = ~self.missing_mask[i]
        return [d for d, k in zip(self.dates, keep) if k], self.values[i, keep]

    def date_slice(self, start: dt.date | None = None, end: dt.date | None = None) -> "PanelSeries":
        keep = np.array(
            [(start is None or d >= start) and (end is None or d <= end) for d in self.dates],
            dtype=bool,
        )
        return replace(
            self,
            dates=[d for d, k in zip(self.dates, keep) if k],
            values=self.values[:, keep],
            missing_mask=self.missing_mask[:, keep],
        )


@dataclass(frozen=True)
class StockMeta:
    ticker: str
    sector: int
    location: int

    def __post_init__(self):
        if not 0 <= self.sector < N_SECTORS:
            raise MetadataError(f"{self.ticker}: sector index {self.sector} out of range")
        if not 0 <= self.location < N_LOCATIONS:
            raise MetadataError(f"{self.ticker}: location index {self.location} out of range")


@dataclass
class MetaTable:
    stocks: dict[str, StockMeta]
    sector_labels: list[str] = field(default_factory=list)
    location_labels: list[str] = field(default_factory=list)

    def __getitem__(self, ticker: str) -> StockMeta:
        try:
            return self.stocks[ticker]
        except KeyError:
            raise MetadataError(f"no metadata for ticker {ticker!r}") from None

    def require(self, tickers: Iterable[str]) -> None:
        missing = [t for t in tickers if t not in self.stocks]
        if missing:
            raise MetadataError(f"no metadata for ticker(s): {', '.join(missing)}")


@dataclass(frozen=True)
class RebalanceCalendar:
    rebalance_dates: frozenset[dt.date]

    @classmethod
    def of(cls, dates: Iterable[dt.date]) -> "RebalanceCalendar":
        return cls(frozenset(dates))


@dataclass
class FeatureFrame:
    """Per-date conditioning rows for one model.

    Row ``t`` pairs the conditioning input ``concat(x0[t], x1[t])`` with the
    target ``y[t]`` observed on ``dates[t]``.
    """

    dates: list[dt.date]
    x0: np.ndarray
    x1: np.ndarray
    y: np.ndarray
    layout: dict[str, slice]
    kind: str
    tickers: list[str]

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.x0, self.x1], axis=1)

    @property
    def p(self) -> int:
        return self.x0.shape[1] + self.x1.shape[1]


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise LoadError(f"{where}: unparseable date {text!r}") from None


def load_panel(path) -> PanelSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise LoadError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    tickers = [h.strip() for h in header[1:]]
    if not tickers:
        raise LoadError(f"{path}: no ticker columns")
    records: dict[dt.date, list[str]] = {}
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise LoadError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        day = _parse_date(row[0], f"{path}:{lineno}")
        if day in records:
            raise LoadError(f"{path}:{lineno}: duplicate date {day}")
        records[day] = row[1:]
    dates = sorted(records)
    values = np.full((len(tickers), len(dates)), np.nan)
    for j, day in enumerate(dates):
        for i, cell in enumerate(records[day]):
            cell = cell.strip()
            if cell:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise LoadError(f"{path}: bad value {cell!r} on {day}") from None
    mask = np.isnan(values)
    return PanelSeries(dates, tickers, np.where(mask, 0.0, values), mask)


def write_panel(panel: PanelSeries, path, header_lines: Sequence[str] = ()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.tickers])
        for j, day in enumerate(panel.dates):
            w.writerow(
                [day.isoformat()]
                + [
                    "" if panel.missing_mask[i, j] else repr(float(panel.values[i, j]))
                    for i in range(len(panel.tickers))
                ]
            )


def load_meta(path) -> MetaTable:
    """Read ``ticker,sector,location`` rows; category indices follow first-seen order."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and [c.strip().lower() for c in rows[0]] == ["ticker", "sector", "location"]:
        rows = rows[1:]
    sectors: list[str] = []
    locations: list[str] = []
    stocks: dict[str, StockMeta] = {}
    for row in rows:
        if len(row) != 3:
            raise LoadError(f"{path}: metadata rows need 3 fields, got {row}")
        ticker, sector, location = (c.strip() for c in row)
        if ticker in stocks:
            raise LoadError(f"{path}: duplicate ticker {ticker}")
        if sector not in sectors:
            sectors.append(sector)
        if location not in locations:
            locations.append(location)
        if len(sectors) > N_SECTORS or len(locations) > N_LOCATIONS:
            raise MetadataError(
                f"{path}: at most {N_SECTORS} sectors and {N_LOCATIONS} locations are supported"
            )
        stocks[ticker] = StockMeta(ticker, sectors.index(sector), locations.index(location))
    return MetaTable(stocks, sectors, locations)


def load_calendar(path) -> RebalanceCalendar:
    path = Path(path)
    dates = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if line and not line.startswith("#"):
            dates.append(_parse_date(line, f"{path}:{lineno}"))
    return RebalanceCalendar.of(dates)


def drop_missing(panel: PanelSeries, scope: Literal["per_stock", "panel_wide"]):
    """Remove missing observations.

    ``panel_wide`` drops every date on which any ticker is missing and returns
    a single panel. ``per_stock`` returns one single-ticker panel per ticker,
    each shortened only by its own missing days.
    """
    if scope == "panel_wide":
        keep = ~panel.missing_mask.any(axis=0)
        if not keep.any():
            raise DataError("no date has a complete cross-section")
        return replace(
            panel,
            dates=[d for d, k in zip(panel.dates, keep) if k],
            values=panel.values[:, keep],
            missing_mask=panel.missing_mask[:, keep],
        )
    if scope == "per_stock":
        out = []
        for i, ticker in enumerate(panel.tickers):
            dates, vals = panel.series(ticker)
            if not dates:
                raise DataError(f"ticker {ticker} has no observations")
            stats = None
            if panel.norm_stats is not None and ticker in panel.norm_stats:
                stats = {ticker: panel.norm_stats[ticker]}
            out.append(
                PanelSeries(dates, [ticker], vals[None, :], np.zeros((1, len(dates)), bool), stats)
            )
        return out
    raise ValueError(f"unknown scope {scope!r}")


def normalize(panel: PanelSeries, train_range: tuple[dt.date, dt.date]) -> PanelSeries:
    """Standardise every ticker with mean and population std from ``train_range``."""
    start, end = train_range
    in_train = np.array([start <= d <= end for d in panel.dates], dtype=bool)
    stats = {}
    values = panel.values.copy()
    for i, ticker in enumerate(panel.tickers):
        obs = panel.values[i, in_train & ~panel.missing_mask[i]]
        if obs.size < 2:
            raise DegenerateSeriesError(f"{ticker}: fewer than 2 training observations")
        mu = float(obs.mean())
        sd = float(obs.std())
        if not sd > 0:
            raise DegenerateSeriesError(f"{ticker}: zero variance over the training window")
        stats[ticker] = (mu, sd)
        values[i] = np.where(panel.missing_mask[i], 0.0, (values[i] - mu) / sd)
    return replace(panel, values=values, norm_stats=stats)


def denormalize(values: np.ndarray, stats: tuple[float, float]) -> np.ndarray:
    mu, sd = stats
    return np.asarray(values) * sd + mu


# -- calendar encoders -------------------------------------------------------


def _resolve_rebalances(
    rebalance_dates: Iterable[dt.date], trading_days: Sequence[dt.date]
) -> set[int]:
    """Positions on ``trading_days`` that count as rebalancing days.

    A rebalance falling on a non-trading day attaches to the preceding trading
    day. Dates outside the trading range are skipped; those close enough to
    the range that a neighbouring marker is lost raise a CalendarWarning.
    """
    if not trading_days:
        return set()
    first, last = trading_days[0], trading_days[-1]
    ordinals = np.array([d.toordinal() for d in trading_days])
    hits = set()
    for r in rebalance_dates:
        if first <= r <= last:
            hits.add(int(np.searchsorted(ordinals, r.toordinal(), side="right") - 1))
        elif 0 < (first - r).days <= 4 or 0 < (r - last).days <= 4:
            warnings.warn(
                f"rebalance date {r} lies just outside the trading range {first}..{last}; "
                "its neighbouring RB markers cannot be placed",
                CalendarWarning,
                stacklevel=3,
            )
    return hits


def rb_markers(calendar: RebalanceCalendar, trading_days: Sequence[dt.date]) -> np.ndarray:
    """``(T, 3)`` RB encoding for every position of ``trading_days``."""
    out = np.zeros((len(trading_days), N_RB))
    for pos in _resolve_rebalances(calendar.rebalance_dates, trading_days):
        out[pos] = (0, 1, 0)
    # the day-of marker wins if two events are one trading day apart
    for pos in _resolve_rebalances(calendar.rebalance_dates, trading_days):
        if pos > 0 and out[pos - 1, 1] == 0:
            out[pos - 1] = (1, 0, 0)
        if pos + 1 < len(trading_days) and out[pos + 1, 1] == 0:
            out[pos + 1] = (0, 0, 1)
    return out


def rb_encoding(
    date_index: int, rebalance_dates: Iterable[dt.date], trading_days: Sequence[dt.date]
) -> np.ndarray:
    if not 0 <= date_index < len(trading_days):
        raise CalendarError(f"date index {date_index} outside the trading-day list")
    return rb_markers(RebalanceCalendar.of(rebalance_dates), trading_days)[date_index]


def dow_encoding(date: dt.date) -> np.ndarray:
    wd = date.weekday()
    if wd >= N_DOW:
        raise CalendarError(f"{date} is a weekend day")
    out = np.zeros(N_DOW)
    out[wd] = 1.0
    return out


def _one_hot(index: int, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


def feature_layout(kind: ModelKind) -> dict[str, slice]:
    if kind == "univariate":
        names = [("sector", N_SECTORS), ("location", N_LOCATIONS), ("dow", N_DOW), ("rb", N_RB)]
    elif kind == "multivariate":
        names = [("dow", N_DOW), ("rb", N_RB)]
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    layout, pos = {}, 0
    for name, width in names:
        layout[name] = slice(pos, pos + width)
        pos += width
    return layout


def _advanced_block(
    kind: ModelKind,
    dates: Sequence[dt.date],
    rb: np.ndarray,
    meta: StockMeta | None,
) -> np.ndarray:
    layout = feature_layout(kind)
    width = max(s.stop for s in layout.values())
    x0 = np.zeros((len(dates), width))
    for t, day in enumerate(dates):
        x0[t, layout["dow"]] = dow_encoding(day)
    x0[:, layout["rb"]] = rb
    if kind == "univariate":
        if meta is None:
            raise MetadataError("univariate features need stock metadata")
        x0[:, layout["sector"]] = _one_hot(meta.sector, N_SECTORS)
        x0[:, layout["location"]] = _one_hot(meta.location, N_LOCATIONS)
    return x0


def build_features(
    panel: PanelSeries,
    meta: MetaTable | None,
    calendar: RebalanceCalendar,
    model_kind: ModelKind,
) -> list[FeatureFrame]:
    """Training rows: one frame per ticker (univariate) or one joint frame.

    RB markers are placed on the full trading-day list of ``panel`` before any
    missing observations are dropped. The first usable date of every series
    has no lag and is excluded.
    """
    rb_all = rb_markers(calendar, panel.dates)
    layout = feature_layout(model_kind)
    pos = {d: j for j, d in enumerate(panel.dates)}
    frames = []
    if model_kind == "univariate":
        if meta is None:
            raise MetadataError("univariate features need stock metadata")
        meta.require(panel.tickers)
        for ticker in panel.tickers:
            dates, vals = panel.series(ticker)
            if len(dates) < 2:
                raise DataError(f"{ticker}: need at least 2 observations")
            idx = [pos[d] for d in dates[1:]]
            x0 = _advanced_block(model_kind, dates[1:], rb_all[idx], meta[ticker])
            frames.append(
                FeatureFrame(dates[1:], x0, vals[:-1, None], vals[1:, None], layout, model_kind, [ticker])
            )
    else:
        clean = drop_missing(panel, "panel_wide")
        if len(clean.dates) < 2:
            raise DataError("need at least 2 complete dates")
        idx = [pos[d] for d in clean.dates[1:]]
        x0 = _advanced_block(model_kind, clean.dates[1:], rb_all[idx], None)
        frames.append(
            FeatureFrame(
                clean.dates[1:],
                x0,
                clean.values[:, :-1].T.copy(),
                clean.values[:, 1:].T.copy(),
                layout,
                model_kind,
                list(clean.tickers),
            )
        )
    return frames


def advance_features(
    calendar: RebalanceCalendar,
    dates: Sequence[dt.date],
    model_kind: ModelKind,
    meta: StockMeta | None = None,
    origin: dt.date | None = None,
) -> np.ndarray:
    """Advanced block for each future trading day in ``dates``.

    Uses calendar and static metadata only. The origin (or, without one, the
    preceding weekday) is prepended to the trading-day list so a rebalance on
    it marks the first horizon day as the day after.
    """
    dates = list(dates)
    if not dates:
        raise CalendarError("empty forecast horizon")
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise CalendarError("horizon dates must be strictly increasing")
    if origin is not None:
        if dates[0] <= origin:
            raise CalendarError(f"horizon dates must lie strictly after the origin {origin}")
        head = origin
    else:
        head = dates[0] - dt.timedelta(days=1)
        while head.weekday() >= N_DOW:
            head -= dt.timedelta(days=1)
    # weekdays beyond the horizon stand in for unknown trading days, so markers
    # of rebalances just outside the horizon still land on it; nothing inside
    # the horizon can be lost, hence no range warning
    days = [head, *dates, *business_days_after(dates[-1], 3)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalendarWarning)
        rb = rb_markers(calendar, days)[1 : 1 + len(dates)]
    return _advanced_block(model_kind, dates, rb, meta)


def business_days_after(origin: dt.date, count: int) -> list[dt.date]:
    out, day = [], origin
    while len(out) < count:
        day += dt.timedelta(days=1)
        if day.weekday() < N_DOW:
            out.append(day)
    return out
