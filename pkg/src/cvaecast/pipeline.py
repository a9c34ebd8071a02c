"""End-to-end wiring shared by the CLI and the acceptance suite."""

from __future__ import annotations

import dataclasses
import datetime as dt
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Mapping, Sequence

import numpy as np

from . import baselines, cvae, forecaster
from .features import (
    FeatureFrame,
    MetaTable,
    PanelSeries,
    RebalanceCalendar,
    build_features,
    feature_layout,
)

logger = logging.getLogger(__name__)

DateRange = tuple[dt.date, dt.date]


def derived_seed(seed: int, *index: int) -> int:
    return int(np.random.SeedSequence([seed, *index]).generate_state(1)[0])


def training_frames(
    panel: PanelSeries,
    meta: MetaTable | None,
    calendar: RebalanceCalendar,
    kind: str,
    train_range: DateRange,
) -> list[FeatureFrame]:
    """Feature rows dated inside ``train_range``.

    Features are built on the whole panel so RB markers next to the range
    boundary are placed correctly, then restricted to training dates.
    """
    start, end = train_range
    out = []
    for fr in build_features(panel, meta, calendar, kind):
        keep = np.array([start <= d <= end for d in fr.dates], dtype=bool)
        out.append(
            dataclasses.replace(
                fr,
                dates=[d for d, k in zip(fr.dates, keep) if k],
                x0=fr.x0[keep],
                x1=fr.x1[keep],
                y=fr.y[keep],
            )
        )
    return out


def _model_for(frame: FeatureFrame, kind: str, q: int, seed: int, norm_stats, meta_info) -> cvae.CvaeModel:
    metadata = {"kind": kind, "tickers": list(frame.tickers), **meta_info}
    stats = {t: norm_stats[t] for t in frame.tickers} if norm_stats else {}
    if kind == "univariate":
        hidden, dec_hidden = 16, (16, 8)
    else:
        hidden, dec_hidden = 64, (64, 64)
    model = cvae.build_model(
        frame.p, frame.y.shape[1], q=q, encoder_hidden=hidden,
        decoder_hidden=dec_hidden, seed=seed, metadata=metadata,
    )
    model.norm_stats = stats
    return model


def _train_job(args):
    model, X, Y, config = args
    return cvae.train(model, (X, Y), config)


def train_models(
    frames: Sequence[FeatureFrame],
    kind: str,
    config: cvae.TrainConfig,
    q: int = 1,
    norm_stats=None,
    workers: int = 1,
    meta_info: Mapping | None = None,
) -> dict[str, tuple[cvae.CvaeModel, cvae.TrainHistory]]:
    """One model per frame; univariate results are keyed by ticker, the joint one by ``"joint"``."""
    jobs, labels = [], []
    for i, fr in enumerate(frames):
        model = _model_for(fr, kind, q, derived_seed(config.seed, 0, i), norm_stats, dict(meta_info or {}))
        job_cfg = dataclasses.replace(config, seed=derived_seed(config.seed, 1, i))
        jobs.append((model, fr.x, fr.y, job_cfg))
        labels.append(fr.tickers[0] if kind == "univariate" else "joint")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]
    return dict(zip(labels, results))


def as_forecast_models(trained: Mapping[str, cvae.CvaeModel]):
    """Univariate models pass through as a mapping; a joint model is unwrapped."""
    if set(trained) == {"joint"}:
        return trained["joint"]
    return dict(trained)


def mean_paths(
    ensembles: Sequence[Mapping[str, forecaster.PathEnsemble]], tickers: Sequence[str]
) -> dict[str, dict[dt.date, float]]:
    """Average-path value per (ticker, date) across one or more forecast origins."""
    out: dict[str, dict[dt.date, float]] = {t: {} for t in tickers}
    for group in ensembles:
        for key, ens in group.items():
            names = ens.tickers if key == "__joint__" else [key]
            mean = ens.samples.mean(axis=0)
            for j, name in enumerate(names):
                if name in out:
                    out[name].update(zip(ens.horizon_dates, mean[:, j]))
    return out


def aligned_matrix(
    values: Mapping[str, Mapping[dt.date, float]], tickers: Sequence[str], dates: Sequence[dt.date]
) -> np.ndarray:
    return np.array([[values[t].get(d, np.nan) for d in dates] for t in tickers], dtype=float)


def actual_matrix(panel: PanelSeries, dates: Sequence[dt.date]) -> np.ndarray:
    pos = {d: j for j, d in enumerate(panel.dates)}
    out = np.full((len(panel.tickers), len(dates)), np.nan)
    for k, d in enumerate(dates):
        j = pos.get(d)
        if j is not None:
            out[:, k] = np.where(panel.missing_mask[:, j], np.nan, panel.values[:, j])
    return out


# -- baselines ---------------------------------------------------------------


def fit_arma_panel(panel: PanelSeries, train_range: DateRange) -> dict[str, baselines.Arma11Params]:
    train = panel.date_slice(*train_range)
    return {t: baselines.fit_arma11(train.series(t)[1]) for t in panel.tickers}


def arma_forecasts(
    params: Mapping[str, baselines.Arma11Params],
    panel: PanelSeries,
    origins: Sequence[tuple[dt.date, Sequence[dt.date]]],
) -> dict[str, dict[dt.date, float]]:
    """ARMA point forecasts; the residual at each origin comes from the CSS recursion on observed data."""
    out: dict[str, dict[dt.date, float]] = {t: {} for t in params}
    for ticker, prm in params.items():
        dates, vals = panel.series(ticker)
        eps = baselines.arma11_residuals(vals, prm.mu, prm.phi, prm.theta)
        for origin, horizon in origins:
            idx = max(i for i, d in enumerate(dates) if d <= origin)
            path = baselines.forecast_arma11(prm, vals[idx], eps[idx], len(horizon))
            out[ticker].update(zip(horizon, path))
    return out


def fit_var_panel(panel: PanelSeries, train_range: DateRange) -> baselines.Var1Params:
    from .features import drop_missing

    train = drop_missing(panel.date_slice(*train_range), "panel_wide")
    return baselines.fit_var1(train.values)


def var_forecasts(
    params: baselines.Var1Params,
    panel: PanelSeries,
    origins: Sequence[tuple[dt.date, Sequence[dt.date]]],
) -> dict[str, dict[dt.date, float]]:
    out: dict[str, dict[dt.date, float]] = {t: {} for t in panel.tickers}
    for origin, horizon in origins:
        y_t = forecaster.last_cross_section(panel.date_slice(end=origin), origin)
        path = baselines.forecast_var1(params, y_t, len(horizon))
        for j, t in enumerate(panel.tickers):
            out[t].update(zip(horizon, path[:, j]))
    return out
