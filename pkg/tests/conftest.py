import numpy as np
import pytest
from hypothesis import settings

from globalload import data as D
from globalload.clustering import build_hierarchy, extract_features
from globalload.model import ModelConfig
from globalload.training import Schedule, TrainConfig, train_global

settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

SMALL_K, SMALL_H = 48, 8


class SmallWorld:
    """Eight short synthetic series with a briefly trained global model."""

    def __init__(self):
        raw = D.generate_synthetic(21, 2, 5)
        tr, _, _ = D.segment_ranges(raw.T, 2, 1, 1, SMALL_K)
        self.sset = raw.scaled(D.train_scales(raw, tr))
        self.split = D.split_by_time(self.sset, 2, 1, 1, SMALL_K, SMALL_H, train_stride=6)
        self.cfg = ModelConfig(SMALL_K, SMALL_H, width=12, n_blocks=2, n_fc_layers=2)
        self.global_params, _ = train_global(
            self.split, self.cfg, TrainConfig(max_epochs=3, batch_size=64)
        )
        feats = np.stack([extract_features(s, self.split.train_range) for s in self.sset.series])
        self.features = feats
        self.hierarchy = build_hierarchy(feats, 3, ids=self.sset.ids)
        self.ft = TrainConfig(lr0=1e-3, schedule=Schedule.STEP, max_epochs=2, batch_size=32)


@pytest.fixture(scope="session")
def small_world():
    return SmallWorld()
