"""Workdir-based pipeline steps shared by the CLI and the acceptance suite.

Workdir layout::

    data/series.csv, data/manifest.json
    models/global.gcm, models/model_l{l}_c{i}.gcm
    hierarchy.json
    selections.json
    reports/*.csv

Series are divided by their mean training load before windowing so one
network can serve loads of very different size. MASE, MAPE and NMAE are all
invariant to that per-series rescaling, so evaluation runs on scaled data.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import data as D
from .clustering import build_hierarchy, extract_features
from .ensemble import (
    build_selections,
    ensemble_forecast,
    level_forecasts,
    load_selections,
    save_selections,
    strategy_all,
    strategy_best,
)
from .localization import LocalizedModelStore, localize_hierarchy, model_filename
from .metrics import evaluate, improvement, naive_windows
from .model import ModelConfig, load_model, predict, save_model
from .training import Schedule, TrainConfig, train_global

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    workdir: str = "work"
    data: str = ""  # defaults to <workdir>/data/series.csv
    # synthetic data
    seed: int = 1
    per_type: int = 10
    weeks: int = 77
    # split
    train_weeks: int = 52
    val_weeks: int = 12
    test_weeks: int = 12
    train_stride: int = 1
    eval_stride: int = 48
    subsample: int = 1
    # model
    K: int = D.DEFAULT_K
    H: int = D.DEFAULT_H
    width: int = 512
    n_blocks: int = 3
    n_fc_layers: int = 3
    # global training
    lam: float = 1e-4
    lr0: float = 1e-3
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-4
    train_seed: int = 0
    # fine-tuning
    ft_lr0: float = 1e-4
    ft_max_epochs: int = 60
    ft_patience: int = 5
    ft_step_epochs: int = 20
    # clustering
    clusters: int = 20
    cluster_seed: int = 0
    eps: float = 0.05
    jobs: int = 1

    @property
    def root(self) -> Path:
        return Path(self.workdir)

    @property
    def data_path(self) -> Path:
        return Path(self.data) if self.data else self.root / "data" / "series.csv"

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.K, self.H, self.width, self.n_blocks, self.n_fc_layers)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lam=self.lam, lr0=self.lr0, schedule=Schedule.PLATEAU, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience, min_delta=self.min_delta,
            seed=self.train_seed,
        )

    def finetune_config(self) -> TrainConfig:
        return TrainConfig(
            lam=self.lam, lr0=self.ft_lr0, schedule=Schedule.STEP, batch_size=self.batch_size,
            max_epochs=self.ft_max_epochs, patience=self.ft_patience, min_delta=self.min_delta,
            seed=self.train_seed, step_epochs=self.ft_step_epochs,
        )

    def updated(self, values: dict) -> "PipelineConfig":
        """Copy with string or typed overrides coerced to each field's type."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        out = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in fields:
                raise KeyError(f"unknown configuration key {key!r}")
            kind = type(getattr(self, key))
            out[key] = kind(raw) if not isinstance(raw, kind) else raw
        return dataclasses.replace(self, **out)


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs from an INI file (all sections merged)."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        values.update(parser[section])
    return values


# --------------------------------------------------------------------- steps


@dataclass
class Prepared:
    raw: D.SeriesSet
    scaled: D.SeriesSet
    scales: np.ndarray
    split: D.DatasetSplit


def prepare(cfg: PipelineConfig, subsample: int | None = None) -> Prepared:
    raw = D.load_csv(cfg.data_path)
    train_range, _, _ = D.segment_ranges(raw.T, cfg.train_weeks, cfg.val_weeks, cfg.test_weeks, cfg.K)
    scales = D.train_scales(raw, train_range)
    scaled = raw.scaled(scales)
    split = D.split_by_time(
        scaled, cfg.train_weeks, cfg.val_weeks, cfg.test_weeks, cfg.K, cfg.H,
        train_stride=cfg.train_stride, eval_stride=cfg.eval_stride,
        train_subsample=cfg.subsample if subsample is None else subsample,
    )
    return Prepared(raw, scaled, scales, split)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def run_generate(cfg: PipelineConfig) -> D.SeriesSet:
    sset = D.generate_synthetic(cfg.seed, cfg.per_type, cfg.weeks)
    path = cfg.data_path
    path.parent.mkdir(parents=True, exist_ok=True)
    D.write_csv(sset, path)
    _write_json(
        path.parent / "manifest.json",
        {"seed": cfg.seed, "per_type": cfg.per_type, "weeks": cfg.weeks, "n_series": sset.N,
         "length": sset.T, "file": path.name},
    )
    return sset


def run_train_global(cfg: PipelineConfig):
    prep = prepare(cfg)
    rows = np.bincount(prep.split.train.sample_series_index, minlength=prep.raw.N)
    log.info("training rows: %d total (%d-%d per series, subsample %d)",
             prep.split.train.m, rows.min(), rows.max(), cfg.subsample)
    params, report = train_global(prep.split, cfg.model_config(), cfg.train_config())
    log.info("global training: %d epochs, stop=%s, best val %.6f at epoch %d (%.1fs)",
             report.epochs, report.stop_reason, report.best_val_loss, report.best_epoch, report.wall_time)
    cfg.models_dir.mkdir(parents=True, exist_ok=True)
    cfg.reports_dir.mkdir(parents=True, exist_ok=True)
    save_model(params, cfg.models_dir / "global.gcm")
    report.write_csv(cfg.reports_dir / "train_global.csv")
    return params, report, prep


def series_features(prep: Prepared) -> np.ndarray:
    return np.stack([extract_features(s, prep.split.train_range) for s in prep.raw.series])


def run_localize(cfg: PipelineConfig, resume: bool = False) -> LocalizedModelStore:
    prep = prepare(cfg)
    global_params = load_model(cfg.models_dir / "global.gcm")
    hierarchy = build_hierarchy(
        series_features(prep), cfg.clusters, cfg.cluster_seed, cfg.eps, ids=prep.raw.ids
    )
    hierarchy.save(cfg.root / "hierarchy.json")

    existing = {}
    if resume:
        for l in range(1, hierarchy.C):
            for i in range(l + 1):
                f = cfg.models_dir / model_filename(l, i)
                if f.exists():
                    existing[(l, i)] = load_model(f)
        log.info("resuming with %d existing localized models", len(existing))

    def persist(key, params):
        save_model(params, cfg.models_dir / model_filename(*key))

    return localize_hierarchy(
        global_params, hierarchy, prep.split, cfg.finetune_config(), jobs=cfg.jobs,
        existing=existing, on_done=persist,
    )


def load_store(cfg: PipelineConfig) -> LocalizedModelStore:
    return LocalizedModelStore.load(cfg.models_dir, cfg.root / "hierarchy.json")


def run_ensemble(cfg: PipelineConfig) -> dict:
    prep = prepare(cfg, subsample=1)
    store = load_store(cfg)
    selections = build_selections(store, prep.split.validation, prep.scaled)
    save_selections(selections, prep.raw, cfg.root / "selections.json")
    return selections


STRATEGIES = ("naive", "global", "all", "best", "ens")
METRIC_COLUMNS = ["id", "agg_type", "mase", "mape", "nmae"]


def strategy_forecasts(store, selections, prep: Prepared) -> dict:
    """``{split: {strategy: forecasts}}`` for validation and test rows."""
    val, test = prep.split.validation, prep.split.test
    val_fc, test_fc = level_forecasts(store, val), level_forecasts(store, test)
    out = {}
    for name, d, fc in (("validation", val, val_fc), ("test", test, test_fc)):
        _, all_fc = strategy_all(store, val, d, prep.scaled, val_fc, fc)
        _, best_fc = strategy_best(store, val, d, prep.scaled, val_fc, fc)
        out[name] = {
            "naive": naive_windows(d, prep.scaled),
            "global": fc[0],
            "all": all_fc,
            "best": best_fc,
            "ens": ensemble_forecast(selections, store, d, fc),
        }
    return out


def run_evaluate(cfg: PipelineConfig) -> dict:
    """Score every strategy on validation and test; returns ``{(split, strategy): EvalResult}``."""
    prep = prepare(cfg, subsample=1)
    store = load_store(cfg)
    selections = load_selections(cfg.root / "selections.json", prep.raw)
    forecasts = strategy_forecasts(store, selections, prep)
    reports = cfg.reports_dir
    reports.mkdir(parents=True, exist_ok=True)

    results, summary, horizon = {}, [], []
    for split_name, by_strategy in forecasts.items():
        d = getattr(prep.split, split_name)
        for strategy in STRATEGIES:
            res = evaluate(by_strategy[strategy], d, prep.scaled)
            results[(split_name, strategy)] = res
            res.per_series[METRIC_COLUMNS].to_csv(
                reports / f"{split_name}_{strategy}_per_series.csv", index=False,
                float_format="%.17g", lineterminator="\n",
            )
            summary.append(res.group_means.assign(split=split_name, strategy=strategy))
            horizon.append(res.per_horizon.assign(split=split_name, strategy=strategy))
        wide = results[(split_name, "global")].per_series[["id", "agg_type"]].copy()
        for strategy in STRATEGIES:
            wide[strategy] = results[(split_name, strategy)].per_series["mase"].to_numpy()
        wide.to_csv(reports / f"{split_name}_mase_by_strategy.csv", index=False,
                    float_format="%.17g", lineterminator="\n")
        imp = pd.concat(
            [
                improvement(results[(split_name, a)], results[(split_name, b)]).assign(
                    baseline=a, candidate=b
                )
                for a, b in (("naive", "global"), ("global", "ens"), ("global", "all"), ("global", "best"))
            ]
        )
        imp[["id", "agg_type", "baseline", "candidate", "mase_baseline", "mase_candidate", "improvement"]].to_csv(
            reports / f"{split_name}_improvement.csv", index=False, float_format="%.17g",
            lineterminator="\n",
        )

    pd.concat(summary)[["split", "strategy", "group", "mase", "mape", "nmae"]].to_csv(
        reports / "summary.csv", index=False, float_format="%.17g", lineterminator="\n"
    )
    per_h = pd.concat(horizon).rename(columns={"mase": "mase_step_over_window_naive_mae"})
    per_h[["split", "strategy", "group", "step", "mase_step_over_window_naive_mae"]].to_csv(
        reports / "per_horizon.csv", index=False, float_format="%.17g", lineterminator="\n"
    )
    return results


def run_forecast(cfg: PipelineConfig, strategy: str = "ens", out_path=None) -> pd.DataFrame:
    """Forecast the ``H`` steps after the end of every series, in original units."""
    raw = D.load_csv(cfg.data_path)
    train_range, _, _ = D.segment_ranges(raw.T, cfg.train_weeks, cfg.val_weeks, cfg.test_weeks, cfg.K)
    scales = D.train_scales(raw, train_range)
    scaled = raw.scaled(scales)
    T = raw.T
    origin_time = raw.start + T * D.STEP
    d = D.WindowedDataset(
        x_lags=scaled.values()[:, T - cfg.K :],
        x_exog=np.repeat(D.encode_calendar(origin_time)[None, :], raw.N, axis=0),
        y=np.zeros((raw.N, cfg.H)),
        sample_series_index=np.arange(raw.N),
        target_start=np.full(raw.N, T),
    )
    if strategy == "global":
        fc = predict(load_model(cfg.models_dir / "global.gcm"), d)
    elif strategy == "ens":
        store = load_store(cfg)
        selections = load_selections(cfg.root / "selections.json", raw)
        fc = ensemble_forecast(selections, store, d)
    else:
        raise ValueError(f"unknown forecast strategy {strategy!r}")
    fc = fc * scales[:, None]
    times = np.datetime_as_string(origin_time + np.arange(cfg.H) * D.STEP, unit="m")
    frame = pd.DataFrame(
        {
            "timestamp": np.tile(times, raw.N),
            "id": np.repeat(raw.ids, cfg.H),
            "forecast": fc.ravel(),
        }
    )
    out_path = Path(out_path) if out_path else cfg.reports_dir / f"forecast_{strategy}.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_path, index=False, float_format="%.17g", lineterminator="\n")
    return frame
