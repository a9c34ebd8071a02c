"""Command-line pipeline: prepare -> train -> forecast / baseline / scenario -> evaluate.

Runs are driven by a JSON config file; command-line flags override it.
Relative paths in the config resolve against the config file's directory.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, cvae, evaluation, features, forecaster, outputs, pipeline, synthetic
from .errors import ConfigError, CvaeCastError, DataError

logger = logging.getLogger("cvaecast")

LABELS = {"univariate": "U-CVAE", "multivariate": "M-CVAE"}


@dataclasses.dataclass
class RunConfig:
    panel: Path
    metadata: Path
    calendar: Path
    train_range: tuple[dt.date, dt.date]
    test_range: tuple[dt.date, dt.date]
    output_dir: Path
    model_kind: str = "univariate"
    q: int = 1
    sigma_train: float = 1.0
    sigma_generate: float = 0.1
    samples: int = 100
    horizon: int | None = None
    seed: int = 0
    max_epochs: int = 500
    batch_size: int = 32
    validation_fraction: float = 0.1
    update_mode: str = "ensemble_average"
    shared_stream: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.model_kind not in LABELS:
            raise ConfigError(f"model_kind must be one of {sorted(LABELS)}")
        (a, b), (c, d) = self.train_range, self.test_range
        if not (a <= b < c <= d):
            raise ConfigError("train and test ranges must be ordered and disjoint (train < test)")
        if self.samples < 1 or self.q < 1 or self.workers < 1:
            raise ConfigError("samples, q and workers must be positive")
        if not (self.sigma_generate > 0 and self.sigma_train > 0):
            raise ConfigError("sigma values must be positive")
        if self.update_mode not in ("per_path", "ensemble_average"):
            raise ConfigError("update_mode must be per_path or ensemble_average")

    @property
    def label(self) -> str:
        return LABELS[self.model_kind]

    def hash(self) -> str:
        """Digest of every setting except the output location."""
        data = {k: v for k, v in self.as_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, tuple):
                v = [x.isoformat() for x in v]
            out[f.name] = v
        return out

    def train_config(self) -> cvae.TrainConfig:
        return cvae.TrainConfig(
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            validation_fraction=self.validation_fraction,
            train_sigma=self.sigma_train,
        )

    def header(self, **extra) -> dict:
        head = {
            "cvaecast": __version__,
            "config_hash": self.hash(),
            "seed": self.seed,
            "sigma": self.sigma_generate,
            "S": self.samples,
        }
        head.update(extra)
        return head

    def path(self, *parts: str) -> Path:
        p = self.output_dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def _date_range(value, name: str) -> tuple[dt.date, dt.date]:
    try:
        a, b = value
        return dt.date.fromisoformat(a), dt.date.fromisoformat(b)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a pair of ISO dates") from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    base = path.parent
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        for key in ("panel", "metadata", "calendar", "output_dir"):
            raw[key] = (base / raw[key]) if not Path(raw[key]).is_absolute() else Path(raw[key])
        raw["train_range"] = _date_range(raw["train_range"], "train_range")
        raw["test_range"] = _date_range(raw["test_range"], "test_range")
        return RunConfig(**raw)
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# -- shared loading ----------------------------------------------------------


def _inputs(cfg: RunConfig):
    for p in (cfg.panel, cfg.metadata, cfg.calendar):
        if not p.exists():
            raise DataError(f"input file {p} does not exist")
    return features.load_panel(cfg.panel), features.load_meta(cfg.metadata), features.load_calendar(cfg.calendar)


def _prepared(cfg: RunConfig):
    path = cfg.output_dir / "prepared" / "panel_normalized.csv"
    stats_path = cfg.output_dir / "prepared" / "norm_stats.json"
    if not path.exists() or not stats_path.exists():
        raise DataError("prepared data not found; run `prepare` first")
    panel = features.load_panel(path)
    stats = json.loads(stats_path.read_text())
    panel.norm_stats = {t: (v["mean"], v["std"]) for t, v in stats["stats"].items()}
    return panel, features.load_meta(cfg.metadata), features.load_calendar(cfg.calendar)


def _test_dates(cfg: RunConfig, panel: features.PanelSeries) -> list[dt.date]:
    a, b = cfg.test_range
    dates = [d for d in panel.dates if a <= d <= b]
    if not dates:
        raise DataError("no panel dates inside the test range")
    return dates


def _origin(cfg: RunConfig, panel: features.PanelSeries) -> dt.date:
    before = [d for d in panel.dates if d <= cfg.train_range[1]]
    if not before:
        raise DataError("no panel dates inside the training range")
    return before[-1]


def _long_horizon(cfg: RunConfig, panel, origin: dt.date, K: int | None) -> list[dt.date]:
    after = [d for d in panel.dates if d > origin]
    if K is None:
        test = _test_dates(cfg, panel)
        return [d for d in after if d <= test[-1]]
    if K <= len(after):
        return after[:K]
    last = after[-1] if after else origin
    return after + features.business_days_after(last, K - len(after))


def _model_dir(cfg: RunConfig, override: str | None) -> Path:
    return Path(override) if override else cfg.output_dir / "models" / cfg.model_kind


def _load_models(cfg: RunConfig, model_dir: Path):
    files = sorted(model_dir.glob("*.cvae"))
    if not files:
        raise DataError(f"no model files in {model_dir}; run `train` first")
    models = {f.stem: cvae.load_model(f) for f in files}
    kinds = {m.metadata.get("kind") for m in models.values()}
    if kinds != {cfg.model_kind}:
        raise ConfigError(f"models in {model_dir} are {sorted(map(str, kinds))}, config asks for {cfg.model_kind}")
    if cfg.model_kind == "univariate":
        return {m.metadata["tickers"][0]: m for m in models.values()}
    if "joint" not in models:
        raise DataError(f"{model_dir}: joint model file missing")
    return models["joint"]


def _slug(label: str) -> str:
    return label.lower().replace("(", "").replace(")", "").replace(",", "")


# -- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel, meta, cal = synthetic.spike_panel(
        n_tickers=args.tickers, n_days=args.days, seed=args.seed, missing_rate=args.missing_rate
    )
    features.write_panel(panel, out / "panel.csv")
    with (out / "meta.csv").open("w") as fh:
        fh.write("ticker,sector,location\n")
        for t in panel.tickers:
            m = meta[t]
            fh.write(f"{t},{meta.sector_labels[m.sector]},{meta.location_labels[m.location]}\n")
    (out / "calendar.txt").write_text("".join(f"{d.isoformat()}\n" for d in sorted(cal.rebalance_dates)))
    n_test = max(1, args.days // 10)
    cfg = {
        "panel": "panel.csv",
        "metadata": "meta.csv",
        "calendar": "calendar.txt",
        "train_range": [panel.dates[0].isoformat(), panel.dates[-n_test - 1].isoformat()],
        "test_range": [panel.dates[-n_test].isoformat(), panel.dates[-1].isoformat()],
        "output_dir": "out",
        "model_kind": "univariate",
        "seed": args.seed,
    }
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    print(f"wrote synthetic panel, metadata, calendar and config.json to {out}")
    return 0


def cmd_prepare(cfg: RunConfig, args) -> int:
    panel, meta, cal = _inputs(cfg)
    meta.require(panel.tickers)
    norm = features.normalize(panel, cfg.train_range)
    head = cfg.header(stage="prepare")
    features.write_panel(norm, cfg.path("prepared", "panel_normalized.csv"))
    stats = {t: {"mean": m, "std": s} for t, (m, s) in norm.norm_stats.items()}
    cfg.path("prepared", "norm_stats.json").write_text(
        json.dumps({"header": head, "stats": stats}, indent=2, sort_keys=True) + "\n"
    )
    for kind in LABELS:
        frames = pipeline.training_frames(norm, meta, cal, kind, cfg.train_range)
        for fr in frames:
            name = fr.tickers[0] if kind == "univariate" else "joint"
            cols = ["date"] + _column_names(fr) + [f"y_{t}" for t in fr.tickers]
            rows = (
                [d.isoformat(), *map(float, x), *map(float, y)]
                for d, x, y in zip(fr.dates, fr.x, fr.y)
            )
            outputs.write_rows(cfg.path("prepared", f"features_{kind}_{name}.csv"), cols, rows, head)
    print(f"prepared {len(panel.tickers)} tickers x {len(panel.dates)} dates in {cfg.output_dir / 'prepared'}")
    return 0


def _x0_names(layout) -> list[str]:
    names = [""] * max(sl.stop for sl in layout.values())
    for name, sl in layout.items():
        for k in range(sl.start, sl.stop):
            names[k] = f"{name}{k - sl.start}"
    return names


def _column_names(fr: features.FeatureFrame) -> list[str]:
    lag = [f"lag_{t}" for t in fr.tickers] if fr.kind == "multivariate" else ["lag"]
    return _x0_names(fr.layout) + lag


def cmd_train(cfg: RunConfig, args) -> int:
    panel, meta, cal = _prepared(cfg)
    frames = pipeline.training_frames(panel, meta, cal, cfg.model_kind, cfg.train_range)
    trained = pipeline.train_models(
        frames, cfg.model_kind, cfg.train_config(), q=cfg.q,
        norm_stats=panel.norm_stats, workers=cfg.workers,
        meta_info={"config_hash": cfg.hash()},
    )
    model_dir = _model_dir(cfg, args.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    for name, (model, hist) in trained.items():
        cvae.save_model(model, model_dir / f"{name}.cvae")
        outputs.write_rows(
            model_dir / f"{name}_history.csv",
            ["epoch", "train_loss", "val_loss"],
            [(e, float(t), float(v)) for e, t, v in hist.rows()],
            cfg.header(
                stage="train", initial_val_loss=repr(hist.initial_val_loss),
                best_epoch=hist.best_epoch, stopped_early=hist.stopped_early,
            ),
        )
        logger.info("%s: %d epochs, best %d", name, len(hist.val_loss), hist.best_epoch)
    print(f"trained {len(trained)} {cfg.label} model(s) into {model_dir}")
    return 0


def _run_forecast(cfg: RunConfig, task: str, models, panel, meta, cal):
    if task == "long":
        origin = _origin(cfg, panel)
        horizon = _long_horizon(cfg, panel, origin, cfg.horizon)
        return [
            forecaster.long_term_task(
                models, panel, meta, cal, origin, horizon, cfg.sigma_generate,
                cfg.samples, cfg.seed, cfg.update_mode, cfg.shared_stream,
            )
        ]
    return forecaster.rolling_task(
        models, panel, meta, cal, _test_dates(cfg, panel), cfg.sigma_generate,
        cfg.samples, cfg.seed, cfg.update_mode, cfg.shared_stream,
    )


def _streams(cfg: RunConfig) -> str:
    if cfg.model_kind == "multivariate":
        return "joint"
    return "shared" if cfg.shared_stream else "independent"


def cmd_forecast(cfg: RunConfig, args) -> int:
    panel, meta, cal = _prepared(cfg)
    models = _load_models(cfg, _model_dir(cfg, args.model_dir))
    groups = _run_forecast(cfg, args.task, models, panel, meta, cal)
    head = cfg.header(
        model=cfg.label, task=args.task, update_mode=cfg.update_mode, streams=_streams(cfg)
    )
    slug = _slug(cfg.label)
    outputs.write_ensembles(cfg.path("forecasts", f"{slug}_{args.task}_ensemble.csv"), groups, head)
    outputs.write_summaries(cfg.path("forecasts", f"{slug}_{args.task}_summary.csv"), groups, head)
    print(f"wrote {cfg.label} {args.task} forecasts for {len(groups)} origin(s)")
    return 0


def _origins(cfg: RunConfig, task: str, panel) -> list[tuple[dt.date, list[dt.date]]]:
    if task == "long":
        origin = _origin(cfg, panel)
        return [(origin, _long_horizon(cfg, panel, origin, cfg.horizon))]
    return forecaster.week_partition(panel.dates, _test_dates(cfg, panel))


def cmd_baseline(cfg: RunConfig, args) -> int:
    panel, _, _ = _prepared(cfg)
    origins = _origins(cfg, args.task, panel)
    which = ["arma", "var"] if args.model == "all" else [args.model]
    for name in which:
        if name == "arma":
            params = pipeline.fit_arma_panel(panel, cfg.train_range)
            values = pipeline.arma_forecasts(params, panel, origins)
            label = "ARMA(1,1)"
            dump = {t: dataclasses.asdict(p) for t, p in params.items()}
        else:
            vparams = pipeline.fit_var_panel(panel, cfg.train_range)
            values = pipeline.var_forecasts(vparams, panel, origins)
            label = "VAR(1)"
            dump = {
                "tickers": panel.tickers,
                "intercept": vparams.intercept.tolist(),
                "coef": vparams.coef.tolist(),
                "resid_cov": vparams.resid_cov.tolist(),
            }
        slug = _slug(label)
        head = cfg.header(model=label, task=args.task)
        head.update(sigma=0.0, S=1)
        cfg.path("baselines", f"{slug}_params.json").write_text(
            json.dumps({"header": head, "params": dump}, indent=2, sort_keys=True, default=float) + "\n"
        )
        groups = outputs.point_forecast_groups(values, origins)
        outputs.write_ensembles(cfg.path("forecasts", f"{slug}_{args.task}_ensemble.csv"), groups, head)
        outputs.write_summaries(cfg.path("forecasts", f"{slug}_{args.task}_summary.csv"), groups, head)
        print(f"wrote {label} {args.task} forecasts")
    return 0


def cmd_scenario(cfg: RunConfig, args) -> int:
    panel, meta, cal = _prepared(cfg)
    models = _load_models(cfg, _model_dir(cfg, args.model_dir))
    origin = dt.date.fromisoformat(args.origin) if args.origin else _origin(cfg, panel)
    horizon = _long_horizon(cfg, panel, origin, args.horizon or cfg.horizon)
    layout = features.feature_layout(cfg.model_kind)
    if cfg.model_kind == "univariate":
        tickers = [args.ticker] if args.ticker else list(models)
        jobs = []
        for t in tickers:
            if t not in models:
                raise DataError(f"no model for ticker {t}")
            x0 = features.advance_features(cal, horizon, "univariate", meta=meta[t], origin=origin)
            y_t = np.array([forecaster.last_observation(panel, t, origin)])
            jobs.append((t, models[t], x0, y_t, [t], args.set_x1))
    else:
        x0 = features.advance_features(cal, horizon, "multivariate", origin=origin)
        y_t = forecaster.last_cross_section(panel.date_slice(end=origin), origin)
        x1 = None
        if args.set_x1 is not None:
            x1 = y_t.copy()
            if args.ticker:
                x1[models.metadata["tickers"].index(args.ticker)] = args.set_x1
            else:
                x1[:] = args.set_x1
        jobs = [("joint", models, x0, y_t, models.metadata["tickers"], x1)]

    head = cfg.header(
        model=cfg.label, task="scenario", origin=origin.isoformat(),
        zero_rb=bool(args.zero_rb), set_x1=args.set_x1,
    )
    base_groups, scen_groups, x0_rows = [], [], []
    x0_cols = _x0_names(layout)
    for name, model, x0, y_t, names, x1 in jobs:
        spec = forecaster.ScenarioSpec.zero_rb() if args.zero_rb else forecaster.ScenarioSpec()
        if x1 is not None:
            spec.x1_override = np.atleast_1d(np.asarray(x1, dtype=float))
        scen_x0 = spec.apply(x0, layout, horizon)
        for tag, block in (("baseline", x0), ("scenario", scen_x0)):
            x0_rows.extend((tag, name, d.isoformat(), *map(int, row)) for d, row in zip(horizon, block))
        base, scen = forecaster.counterfactual(
            model, x0, y_t, spec, layout, cfg.sigma_generate, cfg.samples,
            seed=cfg.seed, shared_seed=not args.independent_seed,
            origin=origin, horizon_dates=horizon, tickers=names,
        )
        base_groups.append({name: base})
        scen_groups.append({name: scen})
    slug = _slug(cfg.label)
    outputs.write_rows(
        cfg.path("scenarios", f"{slug}_advanced_inputs.csv"), ["run", "job", "date", *x0_cols], x0_rows, head
    )
    for tag, groups in (("baseline", base_groups), ("scenario", scen_groups)):
        outputs.write_ensembles(cfg.path("scenarios", f"{slug}_{tag}_ensemble.csv"), groups, head)
        outputs.write_summaries(cfg.path("scenarios", f"{slug}_{tag}_summary.csv"), groups, head)
    print(f"wrote paired baseline/scenario ensembles to {cfg.output_dir / 'scenarios'}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    panel, _, _ = _prepared(cfg)
    files = [Path(f) for f in args.forecasts] if args.forecasts else sorted(
        (cfg.output_dir / "forecasts").glob(f"*_{args.task}_summary.csv")
    )
    if not files:
        raise DataError("no forecast summary files to evaluate")
    tickers = list(panel.tickers)
    per_model, dates = {}, None
    for f in files:
        head, means = outputs.read_summary_means(f)
        model = head.get("model", f.stem)
        fdates = sorted({d for m in means.values() for d in m})
        dates = fdates if dates is None else dates
        if fdates != dates:
            raise DataError(f"{f}: forecast dates differ from {files[0]}")
        forecast = pipeline.aligned_matrix({t: means.get(t, {}) for t in tickers}, tickers, dates)
        per_model[model] = evaluation.evaluate(model, tickers, forecast, pipeline.actual_matrix(panel, dates))
    table = evaluation.report(per_model)
    head = cfg.header(stage="evaluate", task=args.task, models="|".join(table.models))
    title = f"Performance of {'long term' if args.task == 'long' else 'short term rolling'} forecasts"
    with cfg.path("reports", f"{args.task}_report.csv").open("w") as fh:
        fh.writelines(f"# {k}={v}\n" for k, v in head.items())
        fh.write(table.to_csv())
    cfg.path("reports", f"{args.task}_report.txt").write_text(
        "".join(f"# {k}={v}\n" for k, v in head.items()) + table.render(title)
    )
    rows = []
    for model in table.models:
        rows.extend((model, *r) for r in per_model[model].per_stock_rows())
    outputs.write_rows(
        cfg.path("reports", f"{args.task}_per_stock.csv"),
        ["model", "ticker", "MSE", "CD", "CCD"],
        [(m, t, float(a), float(b), float(c)) for m, t, a, b, c in rows],
        head,
    )
    any_report = next(iter(per_model.values()))
    outputs.write_matrix(cfg.path("reports", f"{args.task}_corr_actual.csv"), tickers, any_report.corr_actual, head)
    outputs.write_matrix(cfg.path("reports", f"{args.task}_xcorr_actual.csv"), tickers, any_report.xcorr_actual, head)
    for model, rep in per_model.items():
        slug = _slug(model)
        outputs.write_matrix(cfg.path("reports", f"{args.task}_{slug}_corr.csv"), tickers, rep.corr_forecast, head)
        outputs.write_matrix(cfg.path("reports", f"{args.task}_{slug}_xcorr.csv"), tickers, rep.xcorr_forecast, head)
    if args.trace_pair:
        _write_traces(cfg, args, panel, dates, head)
    print(table.render(title), end="")
    return 0


def _write_traces(cfg: RunConfig, args, panel, dates, head) -> None:
    a, b = args.trace_pair
    actual = pipeline.actual_matrix(panel, dates)
    ia, ib = panel.tickers.index(a), panel.tickers.index(b)
    ref_corr = evaluation.pearson(actual[ia], actual[ib])
    ref_x = evaluation.pearson(actual[ia, :-1], actual[ib, 1:])
    for f in sorted((cfg.output_dir / "forecasts").glob(f"*_{args.task}_ensemble.csv")):
        fhead, paths = outputs.read_ensemble_paths(f)
        if fhead.get("S") == "1" or a not in paths or b not in paths:
            continue
        if fhead.get("streams") == "independent":
            warnings.warn(
                f"{f.name}: ACP pairs samples drawn from independent streams; "
                "rerun forecast with shared_stream for paired samples",
                stacklevel=2,
            )
        pa, pb = paths[a][1], paths[b][1]
        traces = [
            evaluation.expanding_window_estimates(pa, pb, stat, kind)
            for kind in ("corr", "xcorr")
            for stat in ("cap", "acp")
        ]
        thead = dict(head, model=fhead.get("model"), pair=f"{a}|{b}", streams=fhead.get("streams"),
                     reference_corr=repr(ref_corr), reference_xcorr=repr(ref_x))
        outputs.write_rows(
            cfg.path("reports", f"{args.task}_{_slug(fhead.get('model', f.stem))}_trace_{a}_{b}.csv"),
            ["samples", "cap_corr", "acp_corr", "cap_xcorr", "acp_xcorr"],
            [
                (int(m), *(float(t.estimates[i]) for t in traces))
                for i, m in enumerate(traces[0].sample_counts)
            ],
            thead,
        )


# -- argument parsing ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--sigma", type=float, help="generation noise scale")
    p.add_argument("--samples", type=int, help="ensemble size S")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="parallel training jobs")
    p.add_argument("--horizon", type=int, help="long-term horizon K (default: test period)")
    p.add_argument("--model-kind", choices=sorted(LABELS))
    p.add_argument("--update-mode", choices=["per-path", "ensemble-average"])
    p.add_argument("--shared-stream", action="store_true", default=None,
                   help="univariate forecasts of all tickers replay one random stream")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvaecast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic panel, metadata, calendar and config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tickers", type=int, default=2)
    p.add_argument("--days", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing-rate", type=float, default=0.0)

    p = sub.add_parser("prepare", help="normalize the panel and write feature frames")
    _common(p)
    p = sub.add_parser("train", help="train CVAE model(s)")
    _common(p)
    p.add_argument("--model-dir")
    p = sub.add_parser("forecast", help="generate forecast ensembles")
    _common(p)
    p.add_argument("--task", choices=["long", "rolling"], default="long")
    p.add_argument("--model-dir")
    p = sub.add_parser("baseline", help="fit ARMA(1,1) / VAR(1) and forecast")
    _common(p)
    p.add_argument("--task", choices=["long", "rolling"], default="long")
    p.add_argument("--model", choices=["arma", "var", "all"], default="all")
    p = sub.add_parser("scenario", help="paired baseline/counterfactual ensembles")
    _common(p)
    p.add_argument("--model-dir")
    p.add_argument("--ticker")
    p.add_argument("--origin", help="forecast origin (default: last training date)")
    p.add_argument("--zero-rb", action="store_true", help="set RB to (0,0,0) over the horizon")
    p.add_argument("--set-x1", type=float, help="replace the initial lagged observation")
    p.add_argument("--independent-seed", action="store_true",
                   help="do not share random streams between baseline and scenario")
    p = sub.add_parser("evaluate", help="MSE / CD / CCD report tables")
    _common(p)
    p.add_argument("--task", choices=["long", "rolling"], default="long")
    p.add_argument("--forecasts", nargs="*", help="summary files (default: all for the task)")
    p.add_argument("--trace-pair", nargs=2, metavar=("TICKER_A", "TICKER_B"),
                   help="emit CAP/ACP expanding-window traces for this pair")
    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "baseline": cmd_baseline,
    "scenario": cmd_scenario,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        overrides = {
            "sigma_generate": args.sigma,
            "samples": args.samples,
            "seed": args.seed,
            "workers": args.workers,
            "horizon": args.horizon,
            "model_kind": args.model_kind,
            "update_mode": args.update_mode.replace("-", "_") if args.update_mode else None,
            "shared_stream": args.shared_stream,
        }
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except CvaeCastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
