"""Generative forecasting from a trained decoder.

Each step draws ``z ~ N(0, I_q)`` per sample, evaluates the decoder mean and
adds ``N(0, sigma^2)`` observation noise. Multi-step paths feed the previous
step's draws back in as the lagged (ordinary) input, either path by path or
through the ensemble average.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .cvae import CvaeModel, decode
from .errors import CalendarError, ShapeError
from .features import (
    MetaTable,
    PanelSeries,
    RebalanceCalendar,
    advance_features,
    feature_layout,
)

UpdateMode = Literal["per_path", "ensemble_average"]


@dataclass
class PathEnsemble:
    origin_t: dt.date | None
    horizon_dates: list[dt.date]
    samples: np.ndarray  # (S, K, d)
    sigma_used: float
    seed: int | None = None
    tickers: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3 or min(self.samples.shape[:2]) < 1:
            raise ShapeError(f"samples must be S x K x d with S, K >= 1, got {self.samples.shape}")
        if self.horizon_dates and len(self.horizon_dates) != self.samples.shape[1]:
            raise ShapeError("horizon_dates length differs from K")
        if self.origin_t is not None and self.horizon_dates and self.horizon_dates[0] <= self.origin_t:
            raise CalendarError("horizon dates must lie after the origin")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("ensemble contains non-finite values")

    @property
    def S(self) -> int:
        return self.samples.shape[0]

    @property
    def K(self) -> int:
        return self.samples.shape[1]

    def paths(self, ticker: str | int = 0) -> np.ndarray:
        """``(S, K)`` sample paths of one output dimension."""
        j = self.tickers.index(ticker) if isinstance(ticker, str) else ticker
        return self.samples[:, :, j]


@dataclass
class PathSummary:
    mean_path: np.ndarray
    q025: np.ndarray
    q975: np.ndarray


@dataclass
class SliceOverride:
    """Replace one named slice of the advanced block, on ``dates`` or the whole horizon."""

    name: str
    value: np.ndarray
    dates: tuple[dt.date, ...] | None = None


@dataclass
class ScenarioSpec:
    x0_overrides: list[SliceOverride] = field(default_factory=list)
    x1_override: np.ndarray | None = None

    @classmethod
    def zero_rb(cls, dates: Sequence[dt.date] | None = None, x1_override=None) -> "ScenarioSpec":
        return cls(
            [SliceOverride("rb", np.zeros(3), None if dates is None else tuple(dates))],
            None if x1_override is None else np.atleast_1d(np.asarray(x1_override, dtype=float)),
        )

    def apply(
        self, x0_seq: np.ndarray, layout: Mapping[str, slice], horizon_dates: Sequence[dt.date]
    ) -> np.ndarray:
        out = np.array(x0_seq, dtype=float, copy=True)
        index = {d: k for k, d in enumerate(horizon_dates)}
        for ov in self.x0_overrides:
            if ov.name not in layout:
                raise KeyError(f"unknown feature slice {ov.name!r}")
            sl = layout[ov.name]
            value = np.asarray(ov.value, dtype=float)
            if value.shape != (sl.stop - sl.start,):
                raise ShapeError(f"override for {ov.name!r} must have length {sl.stop - sl.start}")
            if ov.dates is None:
                rows = list(range(len(out)))
            else:
                unknown = [d for d in ov.dates if d not in index]
                if unknown:
                    raise CalendarError(f"override dates not in the horizon: {unknown}")
                rows = [index[d] for d in ov.dates]
            out[rows, sl] = value
        return out


def _rng(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), (None if rng is None else int(rng))


def generate_step(
    decoder: CvaeModel,
    x0,
    x1,
    sigma: float,
    S: int,
    rng: np.random.Generator,
    z: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``S`` samples of ``y`` given the conditioning input.

    ``x1`` may be a single vector shared by all samples or an ``(S, p1)``
    array with one lagged input per sample. ``z`` can be injected for
    testing; otherwise it is drawn from ``rng`` before the observation noise.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    x1 = np.broadcast_to(x1, (S, x1.shape[-1])) if x1.ndim == 1 else x1
    if x1.shape[0] != S:
        raise ShapeError("per-sample x1 must have S rows")
    x = np.concatenate([np.broadcast_to(x0, (S, x0.shape[-1])), x1], axis=1)
    if x.shape[1] != decoder.p:
        raise ShapeError(f"conditioning input has {x.shape[1]} features, decoder expects {decoder.p}")
    if z is None:
        z = rng.standard_normal((S, decoder.q))
    mean = decode(decoder, x, np.asarray(z, dtype=float).reshape(S, decoder.q))
    return mean + sigma * rng.standard_normal((S, decoder.d))


def forecast_general(
    decoder: CvaeModel,
    x0_seq,
    x1_init,
    sigma: float,
    S: int,
    K: int | None = None,
    update_mode: UpdateMode = "ensemble_average",
    rng=None,
    origin: dt.date | None = None,
    horizon_dates: Sequence[dt.date] | None = None,
    tickers: Sequence[str] = (),
) -> PathEnsemble:
    """Iterate :func:`generate_step` over a K-step horizon.

    The lagged input at step k is the step k-1 draw of each path
    (``per_path``) or their mean shared by all paths (``ensemble_average``).
    """
    x0_seq = np.atleast_2d(np.asarray(x0_seq, dtype=float))
    K = len(x0_seq) if K is None else K
    if len(x0_seq) != K:
        raise ShapeError(f"x0_seq has {len(x0_seq)} rows for a horizon of {K}")
    if update_mode not in ("per_path", "ensemble_average"):
        raise ValueError(f"unknown update mode {update_mode!r}")
    x1 = np.asarray(x1_init, dtype=float)
    if K > 1 and x1.shape[-1] != decoder.d:
        raise ShapeError("iterated forecasts need the ordinary input to be the lagged output")
    gen, seed = _rng(rng)
    out = np.empty((S, K, decoder.d))
    for k in range(K):
        out[:, k] = generate_step(decoder, x0_seq[k], x1, sigma, S, gen)
        x1 = out[:, k] if update_mode == "per_path" else out[:, k].mean(axis=0)
    return PathEnsemble(
        origin, list(horizon_dates or []), out, sigma, seed, list(tickers)
    )


def forecast_ar1(
    decoder: CvaeModel,
    x0_seq,
    y_t,
    sigma: float,
    S: int,
    K: int | None = None,
    rng=None,
    **kwargs,
) -> PathEnsemble:
    """Iterative forecast whose lag input is the previous ensemble average."""
    return forecast_general(
        decoder, x0_seq, np.atleast_1d(y_t), sigma, S, K, "ensemble_average", rng, **kwargs
    )


def summarize_paths(ensemble: PathEnsemble) -> PathSummary:
    s = ensemble.samples
    return PathSummary(
        s.mean(axis=0),
        np.quantile(s, 0.025, axis=0, method="linear"),
        np.quantile(s, 0.975, axis=0, method="linear"),
    )


# -- task drivers ------------------------------------------------------------


def last_observation(panel: PanelSeries, ticker: str, origin: dt.date) -> float:
    dates, vals = panel.series(ticker)
    keep = [i for i, d in enumerate(dates) if d <= origin]
    if not keep:
        raise CalendarError(f"{ticker}: no observation at or before {origin}")
    return float(vals[keep[-1]])


def last_cross_section(panel: PanelSeries, origin: dt.date) -> np.ndarray:
    ok = [j for j, d in enumerate(panel.dates) if d <= origin and not panel.missing_mask[:, j].any()]
    if not ok:
        raise CalendarError(f"no complete cross-section at or before {origin}")
    return panel.values[:, ok[-1]].copy()


def job_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent stream for one forecasting job."""
    return np.random.default_rng([seed, *index])


def _run_one(
    models,
    panel: PanelSeries,
    meta: MetaTable | None,
    calendar: RebalanceCalendar,
    origin: dt.date,
    horizon_dates: Sequence[dt.date],
    sigma: float,
    S: int,
    seed: int,
    job: tuple[int, ...],
    update_mode: UpdateMode,
    shared_stream: bool = False,
) -> dict[str, PathEnsemble]:
    horizon_dates = list(horizon_dates)
    if isinstance(models, CvaeModel):
        x0 = advance_features(calendar, horizon_dates, "multivariate", origin=origin)
        tickers = models.metadata.get("tickers", panel.tickers)
        y_t = last_cross_section(panel.date_slice(end=origin), origin)
        ens = forecast_general(
            models, x0, y_t, sigma, S, len(horizon_dates), update_mode,
            job_rng(seed, *job), origin=origin, horizon_dates=horizon_dates, tickers=tickers,
        )
        ens.seed = seed
        return {"__joint__": ens}
    out = {}
    for i, ticker in enumerate(panel.tickers):
        if ticker not in models:
            continue
        x0 = advance_features(
            calendar, horizon_dates, "univariate", meta=meta[ticker], origin=origin
        )
        y_t = last_observation(panel, ticker, origin)
        stream = job_rng(seed, *job) if shared_stream else job_rng(seed, *job, i)
        out[ticker] = forecast_general(
            models[ticker], x0, [y_t], sigma, S, len(horizon_dates), update_mode,
            stream, origin=origin, horizon_dates=horizon_dates, tickers=[ticker],
        )
        out[ticker].seed = seed
    return out


def long_term_task(
    models: CvaeModel | Mapping[str, CvaeModel],
    panel: PanelSeries,
    meta: MetaTable | None,
    calendar: RebalanceCalendar,
    origin: dt.date,
    horizon_dates: Sequence[dt.date],
    sigma: float = 0.1,
    S: int = 100,
    seed: int = 0,
    update_mode: UpdateMode = "ensemble_average",
    shared_stream: bool = False,
) -> dict[str, PathEnsemble]:
    """Single-origin forecast over ``horizon_dates``.

    ``models`` maps tickers to univariate models, or is one joint model (the
    result is then keyed ``"__joint__"``). ``panel`` must be normalized; only
    observations up to ``origin`` are read. Univariate jobs draw from
    independent streams unless ``shared_stream`` is set, in which case every
    ticker replays the same stream so sample s is paired across tickers.
    """
    return _run_one(
        models, panel, meta, calendar, origin, horizon_dates, sigma, S, seed, (0,),
        update_mode, shared_stream,
    )


def week_partition(
    trading_days: Sequence[dt.date], test_dates: Sequence[dt.date]
) -> list[tuple[dt.date, list[dt.date]]]:
    """Group test dates by calendar week, each with the last trading day before it."""
    test_dates = sorted(test_dates)
    weeks: dict[tuple[int, int], list[dt.date]] = {}
    for d in test_dates:
        weeks.setdefault(tuple(d.isocalendar())[:2], []).append(d)
    days = sorted(trading_days)
    out = []
    for key in sorted(weeks):
        week = weeks[key]
        before = [d for d in days if d < week[0]]
        if not before:
            raise CalendarError(f"no trading day before the week starting {week[0]}")
        out.append((before[-1], week))
    return out


def rolling_task(
    models: CvaeModel | Mapping[str, CvaeModel],
    panel: PanelSeries,
    meta: MetaTable | None,
    calendar: RebalanceCalendar,
    test_dates: Sequence[dt.date],
    sigma: float = 0.1,
    S: int = 100,
    seed: int = 0,
    update_mode: UpdateMode = "ensemble_average",
    shared_stream: bool = False,
) -> list[dict[str, PathEnsemble]]:
    """Weekly re-anchored forecasts; each week restarts from the observed value at its origin."""
    out = []
    for w, (origin, week) in enumerate(week_partition(panel.dates, test_dates)):
        out.append(
            _run_one(
                models, panel, meta, calendar, origin, week, sigma, S, seed, (1, w),
                update_mode, shared_stream,
            )
        )
    return out


def counterfactual(
    decoder: CvaeModel,
    x0_seq,
    y_t,
    spec: ScenarioSpec,
    layout: Mapping[str, slice],
    sigma: float,
    S: int,
    seed: int = 0,
    shared_seed: bool = True,
    origin: dt.date | None = None,
    horizon_dates: Sequence[dt.date] | None = None,
    tickers: Sequence[str] = (),
) -> tuple[PathEnsemble, PathEnsemble]:
    """Baseline and scenario forecasts with the same 1-lag recursion.

    With ``shared_seed`` both runs consume identical random streams, so any
    difference comes from the overrides alone.
    """
    x0_seq = np.atleast_2d(np.asarray(x0_seq, dtype=float))
    dates = list(horizon_dates) if horizon_dates is not None else list(range(len(x0_seq)))
    scen_x0 = spec.apply(x0_seq, layout, dates)
    scen_y = y_t if spec.x1_override is None else spec.x1_override
    kw = dict(origin=origin, horizon_dates=horizon_dates, tickers=tickers)
    base = forecast_ar1(decoder, x0_seq, y_t, sigma, S, len(x0_seq), np.random.default_rng(seed), **kw)
    scen_rng = np.random.default_rng(seed if shared_seed else [seed, 1])
    scen = forecast_ar1(decoder, scen_x0, scen_y, sigma, S, len(x0_seq), scen_rng, **kw)
    base.seed = scen.seed = seed
    return base, scen


def default_layout(model: CvaeModel) -> dict[str, slice]:
    return feature_layout(model.metadata.get("kind", "univariate"))
