import numpy as np
import pytest

from globalload.clustering import ClusterHierarchy, build_hierarchy
from globalload.errors import EmptyInputError, UnknownSeriesError
from globalload.localization import (
    LocalizedModelStore,
    localize_hierarchy,
    localized_predict,
    model_filename,
)
from globalload.model import predict
from globalload.training import validation_loss


@pytest.fixture(scope="module")
def store(small_world):
    w = small_world
    return localize_hierarchy(w.global_params, w.hierarchy, w.split, w.ft)


class TestLocalize:
    def test_model_count(self, store, small_world):
        C = small_world.hierarchy.C
        assert len(store.localized) == C * (C + 1) // 2 - 1
        assert set(store.localized) == {(1, 0), (1, 1), (2, 0), (2, 1), (2, 2)}

    def test_two_clusters(self, small_world):
        w = small_world
        h = build_hierarchy(w.features, 2)
        s = localize_hierarchy(w.global_params, h, w.split, w.ft.replace(max_epochs=0))
        assert sorted(s.localized) == [(1, 0), (1, 1)]

    def test_zero_epochs_copies_global(self, small_world):
        w = small_world
        s = localize_hierarchy(w.global_params, w.hierarchy, w.split, w.ft.replace(max_epochs=0))
        for p in s.localized.values():
            assert p.theta.tobytes() == w.global_params.theta.tobytes()
        for l in range(w.hierarchy.C):
            np.testing.assert_array_equal(
                localized_predict(s, l, w.split.test), predict(w.global_params, w.split.test)
            )

    def test_never_worse_on_own_cluster(self, store, small_world):
        w = small_world
        for (l, i), p in store.localized.items():
            members = w.hierarchy.clusters(l)[i]
            val = w.split.validation.restrict(members)
            assert validation_loss(p, val) <= validation_loss(w.global_params, val)

    def test_global_untouched(self, store, small_world):
        assert store.global_params is small_world.global_params
        assert all(p is not small_world.global_params for p in store.localized.values())

    def test_parallel_matches_serial(self, store, small_world):
        w = small_world
        par = localize_hierarchy(w.global_params, w.hierarchy, w.split, w.ft, jobs=2)
        for key, p in store.localized.items():
            assert par.localized[key].theta.tobytes() == p.theta.tobytes()

    def test_resume_reuses_existing(self, store, small_world):
        w = small_world
        seen = []
        existing = {(1, 0): store.localized[(1, 0)]}
        out = localize_hierarchy(
            w.global_params, w.hierarchy, w.split, w.ft, existing=existing,
            on_done=lambda key, p: seen.append(key),
        )
        assert (1, 0) not in seen and len(seen) == len(store.localized) - 1
        assert out.localized[(1, 0)] is existing[(1, 0)]

    def test_empty_cluster_tagged(self, small_world):
        w = small_world
        n = w.hierarchy.N
        h = ClusterHierarchy([np.r_[np.zeros(n - 1, dtype=np.int64), 1]], [np.zeros((2, 8))])
        data = w.split.restrict(np.arange(n - 1))  # the singleton cluster has no rows
        with pytest.raises(EmptyInputError, match=r"level 1, cluster 1"):
            localize_hierarchy(w.global_params, h, data, w.ft)

    def test_save_load(self, store, tmp_path):
        store.save(tmp_path)
        assert (tmp_path / model_filename(2, 1)).exists()
        back = LocalizedModelStore.load(tmp_path)
        for key, p in store.localized.items():
            assert back.localized[key].theta.tobytes() == p.theta.tobytes()


class TestGate:
    def test_level_zero_is_global(self, store, small_world):
        d = small_world.split.test
        np.testing.assert_array_equal(localized_predict(store, 0, d), predict(store.global_params, d))

    def test_each_row_uses_its_cluster(self, store, small_world):
        d = small_world.split.test
        h = small_world.hierarchy
        for l in range(1, h.C):
            out = localized_predict(store, l, d)
            for i, members in enumerate(h.clusters(l)):
                rows = np.isin(d.sample_series_index, members)
                direct = predict(store.model(l, i), d.take(rows))
                np.testing.assert_array_equal(out[rows], direct)

    def test_unknown_series(self, store, small_world):
        d = small_world.split.test
        bad = d.take(np.arange(2))
        bad.sample_series_index[:] = 99
        with pytest.raises(UnknownSeriesError):
            localized_predict(store, 1, bad)
