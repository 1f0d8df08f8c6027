"""Fine-tune the global model on every cluster of every hierarchy level."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterHierarchy
from .data import DatasetSplit, WindowedDataset
from .errors import EmptyInputError, UnknownSeriesError
from .model import ModelParams, load_model, predict, save_model
from .training import FINE_TUNE, TrainConfig, fine_tune

log = logging.getLogger(__name__)


@dataclass
class LocalizedModelStore:
    global_params: ModelParams
    hierarchy: ClusterHierarchy
    localized: dict = field(default_factory=dict)  # (level, cluster) -> ModelParams

    @property
    def C(self) -> int:
        return self.hierarchy.C

    def model(self, level: int, cluster: int) -> ModelParams:
        if level == 0:
            return self.global_params
        return self.localized[(level, cluster)]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model(self.global_params, directory / "global.gcm")
        self.hierarchy.save(directory / "hierarchy.json")
        for (l, i), p in sorted(self.localized.items()):
            save_model(p, directory / model_filename(l, i))

    @classmethod
    def load(cls, directory, hierarchy_path=None) -> "LocalizedModelStore":
        directory = Path(directory)
        hierarchy = ClusterHierarchy.load(hierarchy_path or directory / "hierarchy.json")
        store = cls(load_model(directory / "global.gcm"), hierarchy)
        for l in range(1, hierarchy.C):
            for i in range(l + 1):
                store.localized[(l, i)] = load_model(directory / model_filename(l, i))
        return store


def model_filename(level: int, cluster: int) -> str:
    return f"model_l{level}_c{cluster}.gcm"


def _job_seed(base: int, level: int, cluster: int) -> int:
    return int(np.random.SeedSequence([base, level, cluster]).generate_state(1)[0])


def _fine_tune_job(args):
    global_params, data, tc, level, cluster, members = args
    subset = data.restrict(members)
    if subset.train.m == 0 or subset.validation.m == 0:
        raise EmptyInputError(f"cluster (level {level}, cluster {cluster}) has no rows")
    tuned = fine_tune(global_params, subset, tc.replace(seed=_job_seed(tc.seed, level, cluster)))
    return (level, cluster), tuned


def localize_hierarchy(
    global_params: ModelParams,
    hierarchy: ClusterHierarchy,
    data: DatasetSplit,
    tc: TrainConfig = FINE_TUNE,
    jobs: int = 1,
    existing: dict | None = None,
    on_done=None,
) -> LocalizedModelStore:
    """Fine-tune a fresh copy of the global parameters for each (level, cluster).

    ``existing`` entries are reused instead of retrained (resume); ``on_done`` is
    called with ``((level, cluster), params)`` as each job finishes.
    """
    present = set(np.unique(np.concatenate([data.train.sample_series_index, data.validation.sample_series_index])))
    if present - set(range(hierarchy.N)):
        raise UnknownSeriesError("data contains series that are not in the hierarchy")
    existing = existing or {}
    store = LocalizedModelStore(global_params, hierarchy, dict(existing))
    todo = []
    for l in range(1, hierarchy.C):
        for i, members in enumerate(hierarchy.clusters(l)):
            if (l, i) not in existing:
                todo.append((global_params, data, tc, l, i, members))

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1)) as pool:
            results = pool.map(_fine_tune_job, todo)
            for key, tuned in results:
                store.localized[key] = tuned
                if on_done:
                    on_done(key, tuned)
    else:
        for job in todo:
            key, tuned = _fine_tune_job(job)
            log.info("localized level %d cluster %d", *key)
            store.localized[key] = tuned
            if on_done:
                on_done(key, tuned)
    return store


def localized_predict(store: LocalizedModelStore, level: int, d: WindowedDataset) -> np.ndarray:
    """Per row, the forecast of the model owning the row's cluster at ``level``."""
    if level == 0:
        return predict(store.global_params, d)
    h = store.hierarchy
    if not 0 < level < h.C:
        raise ValueError(f"level must be in 0..{h.C - 1}")
    idx = d.sample_series_index
    if np.any(idx >= h.N) or np.any(idx < 0):
        raise UnknownSeriesError("row refers to a series outside the hierarchy")
    gate = np.asarray(h.levels[level - 1])[idx]
    out = np.empty((d.m, d.H))
    for i in np.unique(gate):
        rows = gate == i
        out[rows] = predict(store.model(level, int(i)), d.take(rows))
    return out
