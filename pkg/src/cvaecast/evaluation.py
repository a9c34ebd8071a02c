"""Forecast accuracy and correlation-structure metrics.

Series are passed as ``(N, T)`` arrays, one row per stock; NaN marks a
missing value and is dropped pairwise. Correlations involving a constant
series are undefined and reported as NaN rather than 0, and every average
over correlation entries skips undefined ones.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import DataError
from .forecaster import PathEnsemble

MODEL_ORDER = ("U-CVAE", "M-CVAE", "ARMA(1,1)", "VAR(1)")
SUMMARY_ROWS = (
    ("mean", "MSE"),
    ("median", "MSE"),
    ("mean", "CD"),
    ("median", "CD"),
    ("mean", "CCD"),
    ("median", "CCD"),
)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ok = ~(np.isnan(a) | np.isnan(b))
    a, b = a[ok], b[ok]
    if len(a) < 2:
        return float("nan")
    da, db = a - a.mean(), b - b.mean()
    va, vb = da @ da, db @ db
    if va == 0 or vb == 0:
        return float("nan")
    return float(np.clip((da @ db) / np.sqrt(va * vb), -1.0, 1.0))


def mse_per_stock(forecast, actual) -> np.ndarray:
    f = np.atleast_2d(np.asarray(forecast, dtype=float))
    a = np.atleast_2d(np.asarray(actual, dtype=float))
    if f.shape != a.shape:
        raise DataError(f"forecast {f.shape} and actual {a.shape} are not aligned")
    sq = (f - a) ** 2
    counts = np.sum(~np.isnan(sq), axis=1)
    if f.size == 0 or np.any(counts == 0):
        raise DataError("empty alignment between forecast and actual")
    return np.nansum(sq, axis=1) / counts


def corr_matrix(paths) -> np.ndarray:
    x = np.atleast_2d(np.asarray(paths, dtype=float))
    n = len(x)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = pearson(x[i], x[j])
    return out


def cross_corr_matrix(paths) -> np.ndarray:
    """Entry (i, j) correlates series i at t with series j at t + 1."""
    x = np.atleast_2d(np.asarray(paths, dtype=float))
    n = len(x)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = pearson(x[i, :-1], x[j, 1:])
    return out


def cd(forecast_corr, actual_corr) -> np.ndarray:
    """Per-row mean absolute difference over the entries defined in both matrices."""
    diff = np.abs(np.asarray(forecast_corr, float) - np.asarray(actual_corr, float))
    counts = np.sum(~np.isnan(diff), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, np.nansum(diff, axis=1) / np.maximum(counts, 1), np.nan)


def ccd(forecast_xcorr, actual_xcorr) -> np.ndarray:
    return cd(forecast_xcorr, actual_xcorr)


# -- path correlation estimators ----------------------------------------------

Kind = Literal["corr", "xcorr"]


def _as_paths(e) -> np.ndarray:
    if isinstance(e, PathEnsemble):
        if e.samples.shape[2] != 1:
            raise ValueError("pass ensemble.paths(ticker) for multi-output ensembles")
        return e.samples[:, :, 0]
    return np.atleast_2d(np.asarray(e, dtype=float))


def _pair(a: np.ndarray, b: np.ndarray, kind: Kind) -> float:
    if kind == "corr":
        return pearson(a, b)
    if kind == "xcorr":
        return pearson(a[:-1], b[1:])
    raise ValueError(f"unknown kind {kind!r}")


def cap(ens_i, ens_j, kind: Kind = "corr") -> float:
    """Correlation of the two ensembles' average paths."""
    a, b = _as_paths(ens_i), _as_paths(ens_j)
    return _pair(a.mean(axis=0), b.mean(axis=0), kind)


def acp(ens_i, ens_j, kind: Kind = "corr") -> float:
    """Average of per-sample path correlations; sample s of i pairs with sample s of j."""
    a, b = _as_paths(ens_i), _as_paths(ens_j)
    if a.shape != b.shape:
        raise ValueError("ACP pairs samples by index; ensembles must have equal shape")
    vals = np.array([_pair(a[s], b[s], kind) for s in range(len(a))])
    if np.all(np.isnan(vals)):
        return float("nan")
    return float(np.nanmean(vals))


@dataclass
class ConvergenceTrace:
    statistic: str
    kind: str
    sample_counts: np.ndarray
    estimates: np.ndarray
    reference: float | None = None


def expanding_window_estimates(
    ens_i,
    ens_j,
    statistic: Literal["cap", "acp"],
    kind: Kind = "corr",
    reference: float | None = None,
) -> ConvergenceTrace:
    a, b = _as_paths(ens_i), _as_paths(ens_j)
    fn = {"cap": cap, "acp": acp}[statistic]
    if statistic == "acp":
        # running mean of the per-path values; identical to recomputing acp on a[:m]
        per = np.array([_pair(a[s], b[s], kind) for s in range(len(a))])
        defined = ~np.isnan(per)
        sums = np.cumsum(np.where(defined, per, 0.0))
        counts = np.cumsum(defined)
        with np.errstate(invalid="ignore", divide="ignore"):
            est = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    else:
        est = np.array([fn(a[:m], b[:m], kind) for m in range(1, len(a) + 1)])
    return ConvergenceTrace(statistic, kind, np.arange(1, len(a) + 1), est, reference)


# -- reports -----------------------------------------------------------------


@dataclass
class EvalReport:
    model: str
    tickers: list[str]
    mse: np.ndarray
    cd: np.ndarray
    ccd: np.ndarray
    corr_forecast: np.ndarray
    corr_actual: np.ndarray
    xcorr_forecast: np.ndarray
    xcorr_actual: np.ndarray
    summary: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.summary:
            for stat, col in SUMMARY_ROWS:
                self.summary[f"{stat} {col}"] = _summarise(stat, getattr(self, col.lower()))

    def per_stock_rows(self) -> list[tuple[str, float, float, float]]:
        return list(zip(self.tickers, self.mse, self.cd, self.ccd))


def _summarise(stat: str, values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if np.all(np.isnan(values)):
        return float("nan")
    return float(np.nanmean(values) if stat == "mean" else np.nanmedian(values))


def evaluate(model: str, tickers: Sequence[str], forecast, actual) -> EvalReport:
    """Score aligned ``(N, T)`` forecast and actual arrays for one model."""
    f = np.atleast_2d(np.asarray(forecast, dtype=float))
    a = np.atleast_2d(np.asarray(actual, dtype=float))
    mse = mse_per_stock(f, a)
    cf, ca = corr_matrix(f), corr_matrix(a)
    xf, xa = cross_corr_matrix(f), cross_corr_matrix(a)
    return EvalReport(model, list(tickers), mse, cd(cf, ca), ccd(xf, xa), cf, ca, xf, xa)


def ordered_models(names) -> list[str]:
    names = list(names)
    known = [m for m in MODEL_ORDER if m in names]
    return known + sorted(n for n in names if n not in MODEL_ORDER)


@dataclass
class ComparisonTable:
    models: list[str]
    rows: list[str]
    values: np.ndarray  # rows x models
    best: list[str | None]

    def render(self, title: str = "") -> str:
        width = max(12, *(len(m) + 2 for m in self.models))
        lines = [title] if title else []
        head = " " * 12 + "".join(f"{m:>{width}}" for m in self.models)
        lines += [head, "-" * len(head)]
        for r, name in enumerate(self.rows):
            cells = []
            for c, model in enumerate(self.models):
                v = self.values[r, c]
                txt = "nan" if np.isnan(v) else f"{v:.3f}"
                if self.best[r] == model:
                    txt = "*" + txt
                cells.append(f"{txt:>{width}}")
            lines.append(f"{name:<12}" + "".join(cells))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["statistic", *self.models, "best"])
        for r, name in enumerate(self.rows):
            w.writerow([name, *(repr(float(v)) for v in self.values[r]), self.best[r] or ""])
        return buf.getvalue()


def report(reports: Mapping[str, EvalReport]) -> ComparisonTable:
    """Mean/median MSE, CD and CCD per model, best (lowest) value marked per row."""
    models = ordered_models(reports)
    rows = [f"{stat} {col}" for stat, col in SUMMARY_ROWS]
    values = np.array([[reports[m].summary[r] for m in models] for r in rows])
    best = []
    for r in range(len(rows)):
        row = values[r]
        best.append(None if np.all(np.isnan(row)) else models[int(np.nanargmin(row))])
    return ComparisonTable(models, rows, values, best)
