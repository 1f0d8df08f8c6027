"""Per-series forecast combination over hierarchy levels.

Candidate ``l`` is the level-``l`` gated forecast (level 0 = global model).
ENS greedily averages candidates in validation-MASE order; ALL and BEST pick a
single level for every series or per series.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SeriesSet, WindowedDataset
from .errors import UnknownSeriesError
from .localization import LocalizedModelStore, localized_predict
from .metrics import naive_windows, window_scores


def mean_mase(actual, forecast, naive) -> float:
    """Mean per-window MASE, skipping degenerate windows (inf if none are usable)."""
    scores = window_scores(actual, forecast, naive)[0]
    scores = scores[~np.isnan(scores)]
    return float(scores.mean()) if len(scores) else float("inf")


@dataclass
class CandidateForecasts:
    forecasts: np.ndarray  # C x n_windows x H, one slab per level
    actual: np.ndarray  # n_windows x H
    naive: np.ndarray  # n_windows x H

    @property
    def C(self) -> int:
        return len(self.forecasts)

    def error(self, levels) -> float:
        return mean_mase(self.actual, self.forecasts[sorted(levels)].mean(axis=0), self.naive)

    @property
    def errors(self) -> np.ndarray:
        return np.array([self.error([l]) for l in range(self.C)])


@dataclass
class EnsembleSelection:
    levels: list
    error: float


def rank_candidates(errors) -> list:
    """Levels by ascending error; ties favour the lower (more global) level."""
    errors = np.asarray(errors, dtype=np.float64)
    errors = np.where(np.isnan(errors), np.inf, errors)
    return sorted(range(len(errors)), key=lambda l: (errors[l], l))


def build_ensemble(c: CandidateForecasts) -> EnsembleSelection:
    ranked = rank_candidates(c.errors)
    chosen = [ranked[0]]
    best = c.error(chosen)
    for level in ranked[1:]:
        trial = c.error(chosen + [level])
        if trial >= best:
            break
        chosen.append(level)
        best = trial
    return EnsembleSelection(chosen, best)


# ----------------------------------------------------------- store adapters


def level_forecasts(store: LocalizedModelStore, d: WindowedDataset, levels=None) -> dict:
    levels = range(store.C) if levels is None else levels
    return {l: localized_predict(store, l, d) for l in levels}


def candidates_by_series(
    store: LocalizedModelStore, d: WindowedDataset, sset: SeriesSet, level_fc: dict | None = None
) -> dict:
    """Series index -> CandidateForecasts for the rows of ``d``."""
    level_fc = level_fc or level_forecasts(store, d)
    stacked = np.stack([level_fc[l] for l in range(store.C)])
    naive = naive_windows(d, sset)
    out = {}
    for i in np.unique(d.sample_series_index):
        rows = d.sample_series_index == i
        out[int(i)] = CandidateForecasts(stacked[:, rows], d.y[rows], naive[rows])
    return out


def build_selections(store, d_val, sset) -> dict:
    """Series index -> EnsembleSelection from validation forecasts."""
    return {i: build_ensemble(c) for i, c in candidates_by_series(store, d_val, sset).items()}


def ensemble_forecast(selections: dict, store: LocalizedModelStore, d: WindowedDataset, level_fc=None):
    """Row-wise unweighted mean of the selected levels' forecasts."""
    missing = set(np.unique(d.sample_series_index).tolist()) - set(selections)
    if missing:
        raise UnknownSeriesError(f"no ensemble selection for series {sorted(missing)}")
    needed = sorted({l for s in selections.values() for l in s.levels})
    level_fc = level_fc or level_forecasts(store, d, needed)
    out = np.empty((d.m, d.H))
    for i, sel in selections.items():
        rows = d.sample_series_index == i
        if rows.any():
            out[rows] = np.stack([level_fc[l][rows] for l in sorted(sel.levels)]).mean(axis=0)
    return out


def strategy_all(store, d_val, d_test, sset, val_fc=None, test_fc=None):
    """One level for every series: the one with the lowest mean validation MASE.

    Returns ``(level, test_forecasts)``.
    """
    cands = candidates_by_series(store, d_val, sset, val_fc)
    errors = np.mean([c.errors for c in cands.values()], axis=0)
    level = rank_candidates(errors)[0]
    fc = test_fc[level] if test_fc else localized_predict(store, level, d_test)
    return level, fc


def strategy_best(store, d_val, d_test, sset, val_fc=None, test_fc=None):
    """Each series at its own validation-optimal level; returns ``(levels, test_forecasts)``."""
    cands = candidates_by_series(store, d_val, sset, val_fc)
    choice = {i: rank_candidates(c.errors)[0] for i, c in cands.items()}
    selections = {i: EnsembleSelection([l], float("nan")) for i, l in choice.items()}
    return choice, ensemble_forecast(selections, store, d_test, test_fc)


# ---------------------------------------------------------------- persistence


def save_selections(selections: dict, sset: SeriesSet, path) -> None:
    obj = {
        sset.series[i].id: {"levels": [int(l) for l in sel.levels], "val_mase": float(sel.error)}
        for i, sel in sorted(selections.items())
    }
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_selections(path, sset: SeriesSet) -> dict:
    obj = json.loads(Path(path).read_text())
    out = {}
    for sid, entry in obj.items():
        try:
            i = sset.index_of(sid)
        except ValueError:
            raise UnknownSeriesError(f"selection for unknown series {sid!r}") from None
        out[i] = EnsembleSelection(list(entry["levels"]), float(entry["val_mase"]))
    return out
