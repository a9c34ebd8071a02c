"""Delimited output files: forecast ensembles, summaries, matrices and traces.

Every file starts with ``# key=value`` provenance lines (config hash, seed,
sigma, sample count, ...), followed by a CSV header row.
"""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LoadError
from .forecaster import PathEnsemble, summarize_paths

ENSEMBLE_COLUMNS = ["ticker", "origin_date", "horizon_index", "horizon_date", "sample_index", "value"]
SUMMARY_COLUMNS = ["ticker", "origin_date", "horizon_date", "mean", "q025", "q975"]


def _fmt(v: float) -> str:
    return repr(float(v))


def _write(path, header: Mapping[str, object], columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def read_table(path) -> tuple[dict[str, str], list[dict[str, str]]]:
    path = Path(path)
    header: dict[str, str] = {}
    lines = path.read_text().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
        else:
            body.append(line)
    if not body:
        raise LoadError(f"{path}: no table found")
    return header, list(csv.DictReader(body))


def _ensemble_rows(group: Mapping[str, PathEnsemble]):
    for key, ens in group.items():
        names = ens.tickers or [key]
        origin = ens.origin_t.isoformat() if ens.origin_t else ""
        dates = [d.isoformat() for d in ens.horizon_dates]
        for j, name in enumerate(names):
            for k, day in enumerate(dates):
                for s in range(ens.S):
                    yield [name, origin, k + 1, day, s, _fmt(ens.samples[s, k, j])]


def _summary_rows(group: Mapping[str, PathEnsemble]):
    for key, ens in group.items():
        names = ens.tickers or [key]
        summary = summarize_paths(ens)
        origin = ens.origin_t.isoformat() if ens.origin_t else ""
        for j, name in enumerate(names):
            for k, day in enumerate(ens.horizon_dates):
                yield [
                    name, origin, day.isoformat(),
                    _fmt(summary.mean_path[k, j]), _fmt(summary.q025[k, j]), _fmt(summary.q975[k, j]),
                ]


def write_ensembles(path, groups: Sequence[Mapping[str, PathEnsemble]], header: Mapping[str, object]) -> None:
    _write(path, header, ENSEMBLE_COLUMNS, (r for g in groups for r in _ensemble_rows(g)))


def write_summaries(path, groups: Sequence[Mapping[str, PathEnsemble]], header: Mapping[str, object]) -> None:
    _write(path, header, SUMMARY_COLUMNS, (r for g in groups for r in _summary_rows(g)))


def point_forecast_groups(
    values: Mapping[str, Mapping[dt.date, float]],
    origins: Sequence[tuple[dt.date, Sequence[dt.date]]],
) -> list[dict[str, PathEnsemble]]:
    """Wrap point forecasts as one-sample ensembles so they share the CVAE file format."""
    groups = []
    for origin, horizon in origins:
        group = {}
        for ticker, by_date in values.items():
            path = np.array([by_date[d] for d in horizon], dtype=float)
            group[ticker] = PathEnsemble(origin, list(horizon), path[None, :, None], 0.0, None, [ticker])
        groups.append(group)
    return groups


def read_summary_means(path) -> tuple[dict[str, str], dict[str, dict[dt.date, float]]]:
    header, rows = read_table(path)
    out: dict[str, dict[dt.date, float]] = {}
    for r in rows:
        out.setdefault(r["ticker"], {})[dt.date.fromisoformat(r["horizon_date"])] = float(r["mean"])
    return header, out


def read_ensemble_paths(path) -> tuple[dict[str, str], dict[str, tuple[list[dt.date], np.ndarray]]]:
    """Per ticker, the horizon dates and an ``(S, T)`` array of concatenated sample paths."""
    header, rows = read_table(path)
    cells: dict[str, dict[tuple[dt.date, int], float]] = {}
    for r in rows:
        key = (dt.date.fromisoformat(r["horizon_date"]), int(r["sample_index"]))
        cells.setdefault(r["ticker"], {})[key] = float(r["value"])
    out = {}
    for ticker, by_key in cells.items():
        dates = sorted({d for d, _ in by_key})
        S = 1 + max(s for _, s in by_key)
        arr = np.array([[by_key[(d, s)] for d in dates] for s in range(S)])
        out[ticker] = (dates, arr)
    return header, out


def write_matrix(path, tickers: Sequence[str], matrix: np.ndarray, header: Mapping[str, object]) -> None:
    _write(
        path, header, ["ticker", *tickers],
        ([t, *(_fmt(v) for v in row)] for t, row in zip(tickers, matrix)),
    )


def write_rows(path, columns: Sequence[str], rows: Iterable[Sequence], header: Mapping[str, object]) -> None:
    _write(path, header, columns, ([_fmt(v) if isinstance(v, float) else v for v in r] for r in rows))
