"""Load series, calendar encoding, rolling windows, time splits and subsampling.

All timestamps are naive UTC ``datetime64[m]`` values on a 30-minute grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import (
    DuplicateError,
    EmptyInputError,
    GapError,
    GridError,
    InsufficientDataError,
    ShapeError,
)

STEP = np.timedelta64(30, "m")
STEPS_PER_DAY = 48
STEPS_PER_WEEK = 7 * STEPS_PER_DAY
CAL_DIM = 12 + 7 + 48
DEFAULT_K = 336
DEFAULT_H = 48
SYNTHETIC_START = np.datetime64("2009-07-01T00:00", "m")


class AggregateType(str, enum.Enum):
    SINGLE = "Single"
    STS = "sTS"
    MTS = "mTS"
    LTS = "lTS"


AGGREGATE_SIZES = {AggregateType.STS: 50, AggregateType.MTS: 100, AggregateType.LTS: 200}


@dataclass
class Series:
    id: str
    aggregate_type: AggregateType
    start: np.datetime64
    values: np.ndarray
    step: np.timedelta64 = STEP

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.start = np.datetime64(self.start, "m")
        self.aggregate_type = AggregateType(self.aggregate_type)
        if self.values.ndim != 1:
            raise ShapeError("series values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"series {self.id!r} contains non-finite values")

    def __len__(self):
        return len(self.values)

    def timestamps(self) -> np.ndarray:
        return self.start + np.arange(len(self.values)) * self.step


@dataclass
class SeriesSet:
    series: list
    # hidden constituents of aggregates (id -> n_members x T), only kept on request
    constituents: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.series:
            raise EmptyInputError("a SeriesSet needs at least one series")
        first = self.series[0]
        ids = set()
        for s in self.series:
            if s.id in ids:
                raise DuplicateError(f"duplicate series id {s.id!r}")
            ids.add(s.id)
            if s.start != first.start or s.step != first.step or len(s) != len(first):
                raise ShapeError(f"series {s.id!r} is not aligned with {first.id!r}")

    @property
    def N(self) -> int:
        return len(self.series)

    @property
    def T(self) -> int:
        return len(self.series[0])

    @property
    def ids(self) -> list:
        return [s.id for s in self.series]

    @property
    def start(self) -> np.datetime64:
        return self.series[0].start

    def values(self) -> np.ndarray:
        return np.stack([s.values for s in self.series])

    def timestamps(self) -> np.ndarray:
        return self.series[0].timestamps()

    def index_of(self, series_id: str) -> int:
        return self.ids.index(series_id)

    def scaled(self, scales: Sequence[float]) -> "SeriesSet":
        """Return a copy with every series divided by its own scale."""
        return SeriesSet(
            [
                Series(s.id, s.aggregate_type, s.start, s.values / float(c))
                for s, c in zip(self.series, scales)
            ]
        )


# --------------------------------------------------------------------------- CSV


def load_csv(path) -> SeriesSet:
    """Read a ``timestamp,id,value[,agg]`` CSV into an aligned SeriesSet."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    if path.stat().st_size == 0:
        raise EmptyInputError(f"{path} is empty")
    try:
        df = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise EmptyInputError(f"{path} is empty") from exc
    if df.empty:
        raise EmptyInputError(f"{path} has a header but no rows")
    missing = {"timestamp", "id", "value"} - set(df.columns)
    if missing:
        raise ValueError(f"{path} is missing columns {sorted(missing)}")

    ts = pd.to_datetime(df["timestamp"], utc=True).dt.tz_localize(None)
    df = df.assign(timestamp=ts.values.astype("datetime64[m]"))
    values = df["value"].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad = df.loc[~np.isfinite(values)].iloc[0]
        raise ValueError(f"non-finite value for series {bad['id']!r} at {bad['timestamp']}")
    if df.duplicated(["id", "timestamp"]).any():
        bad = df.loc[df.duplicated(["id", "timestamp"])].iloc[0]
        raise DuplicateError(f"duplicate row for series {bad['id']!r} at {bad['timestamp']}")

    series = []
    for sid, grp in df.groupby("id", sort=False):
        grp = grp.sort_values("timestamp")
        t = grp["timestamp"].to_numpy().astype("datetime64[m]")
        if np.any((t - t[0]) % STEP != np.timedelta64(0, "m")) or _minute_of_day(t[:1])[0] % 30:
            raise GridError(f"series {sid!r} has timestamps off the 30-minute grid")
        jumps = np.nonzero(np.diff(t) != STEP)[0]
        if len(jumps):
            raise GapError(sid, t[jumps[0]] + STEP)
        agg = AggregateType.SINGLE
        if "agg" in grp.columns and pd.notna(grp["agg"].iloc[0]):
            agg = AggregateType(str(grp["agg"].iloc[0]))
        series.append(Series(str(sid), agg, t[0], grp["value"].to_numpy(dtype=np.float64)))
    return SeriesSet(series)


def write_csv(sset: SeriesSet, path) -> None:
    """Write ``timestamp,id,value,agg`` rows, values with 17 significant digits."""
    ts = np.datetime_as_string(sset.timestamps(), unit="m")
    frames = [
        pd.DataFrame(
            {"timestamp": ts, "id": s.id, "value": s.values, "agg": s.aggregate_type.value}
        )
        for s in sset.series
    ]
    pd.concat(frames).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# --------------------------------------------------------------------- synthetic


def _ar_factor(rng, T, phi=0.995, sd=0.1):
    """Slowly varying multiplicative factor (weather-like), log-AR(1)."""
    shocks = rng.standard_normal(T) * sd * np.sqrt(1 - phi**2)
    return np.exp(lfilter([1.0], [1.0, -phi], shocks))


def _draw_consumers(rng, n, T, common):
    t = np.arange(T)[None, :]
    scale = 0.5 * rng.lognormal(0.0, 0.5, size=(n, 1))
    daily_amp = rng.uniform(0.3, 0.6, size=(n, 1))
    weekly_amp = rng.uniform(0.05, 0.2, size=(n, 1))
    daily_phase = rng.normal(14.0, 3.0, size=(n, 1))
    weekly_phase = rng.uniform(0, STEPS_PER_WEEK, size=(n, 1))
    weekend = rng.uniform(0.8, 1.2, size=(n, 1))
    noise_sd = rng.uniform(0.4, 0.8, size=(n, 1))

    profile = (
        1.0
        + daily_amp * np.sin(2 * np.pi * (t - daily_phase) / STEPS_PER_DAY)
        + weekly_amp * np.sin(2 * np.pi * (t - weekly_phase) / STEPS_PER_WEEK)
    )
    # synthetic start is a Wednesday (weekday 2, Monday = 0)
    is_weekend = ((t // STEPS_PER_DAY + 2) % 7) >= 5
    profile = profile * np.where(is_weekend, weekend, 1.0)
    noise = np.exp(noise_sd * rng.standard_normal((n, T)) - 0.5 * noise_sd**2)
    return np.clip(scale * profile * common[None, :] * noise, 0.0, None)


def generate_synthetic(
    seed: int, n_per_type: int, n_weeks: int, keep_constituents: bool = False
) -> SeriesSet:
    """Seeded surrogate pool of consumer and transformer-station loads (kW).

    ``n_per_type`` single consumers are drawn directly; each sTS/mTS/lTS series is
    the exact sum of a fresh draw of 50/100/200 hidden consumers. All consumers
    share one slowly varying multiplicative factor.
    """
    if n_per_type < 1:
        raise ValueError("n_per_type must be >= 1")
    if n_weeks < 3:
        raise ValueError("n_weeks must be >= 3")
    T = n_weeks * STEPS_PER_WEEK
    ss = np.random.SeedSequence(seed)
    common_seq, *series_seqs = ss.spawn(1 + 4 * n_per_type)
    common = _ar_factor(np.random.default_rng(common_seq), T)

    series, constituents = [], {}
    k = 0
    for agg in AggregateType:
        for j in range(n_per_type):
            rng = np.random.default_rng(series_seqs[k])
            k += 1
            sid = f"{agg.value.lower()}_{j:03d}"
            if agg is AggregateType.SINGLE:
                values = _draw_consumers(rng, 1, T, common)[0]
            else:
                members = _draw_consumers(rng, AGGREGATE_SIZES[agg], T, common)
                values = members.sum(axis=0)
                if keep_constituents:
                    constituents[sid] = members
            series.append(Series(sid, agg, SYNTHETIC_START, values))
    return SeriesSet(series, constituents=constituents)


# ---------------------------------------------------------------------- calendar


def _minute_of_day(t):
    t = np.asarray(t, dtype="datetime64[m]")
    return (t - t.astype("datetime64[D]")).astype(np.int64)


def calendar_indices(timestamps) -> np.ndarray:
    """Column indices (month, weekday, slot) of the one-hot layout, shape (n, 3)."""
    t = np.atleast_1d(np.asarray(timestamps, dtype="datetime64[m]"))
    minutes = _minute_of_day(t)
    if np.any(minutes % 30):
        raise GridError("timestamp is not on the 30-minute grid")
    months = t.astype("datetime64[M]").astype(np.int64) % 12
    days = t.astype("datetime64[D]").astype(np.int64)
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday; Monday = 0
    slot = minutes // 30
    return np.stack([months, 12 + weekday, 19 + slot], axis=1)


def encode_calendar(timestamps) -> np.ndarray:
    """One-hot month | weekday | half-hour encoding; (67,) for a scalar, else (n, 67)."""
    idx = calendar_indices(timestamps)
    out = np.zeros((len(idx), CAL_DIM))
    np.put_along_axis(out, idx, 1.0, axis=1)
    return out[0] if np.ndim(timestamps) == 0 else out


# ----------------------------------------------------------------------- windows


@dataclass
class WindowedDataset:
    x_lags: np.ndarray
    x_exog: np.ndarray
    y: np.ndarray
    sample_series_index: np.ndarray
    # position of the first target step within its source series
    target_start: np.ndarray

    def __post_init__(self):
        m = len(self.x_lags)
        if not (len(self.x_exog) == len(self.y) == len(self.sample_series_index) == len(self.target_start) == m):
            raise ShapeError("row counts differ across dataset matrices")

    @property
    def m(self) -> int:
        return len(self.y)

    @property
    def K(self) -> int:
        return self.x_lags.shape[1]

    @property
    def H(self) -> int:
        return self.y.shape[1]

    def __len__(self):
        return self.m

    def take(self, rows) -> "WindowedDataset":
        return WindowedDataset(
            self.x_lags[rows],
            self.x_exog[rows],
            self.y[rows],
            self.sample_series_index[rows],
            self.target_start[rows],
        )

    def restrict(self, series_indices) -> "WindowedDataset":
        """Rows whose source series is in ``series_indices``."""
        return self.take(np.isin(self.sample_series_index, np.asarray(list(series_indices))))


def make_windows(
    s: Series,
    K: int = DEFAULT_K,
    H: int = DEFAULT_H,
    stride: int = 1,
    series_index: int = 0,
    target_range: tuple | None = None,
) -> WindowedDataset:
    """Rolling windows of ``K`` lags and ``H`` targets.

    ``target_range=(lo, hi)`` keeps only windows whose targets lie in
    ``[lo, hi)``; lags may reach back before ``lo``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    T = len(s)
    lo, hi = target_range if target_range is not None else (K, T)
    if lo < K or hi > T or hi - lo < H:
        raise InsufficientDataError(
            f"series {s.id!r}: need K={K} lags and H={H} targets inside [{lo}, {hi}) of length {T}"
        )
    starts = np.arange(lo, hi - H + 1, stride)
    lag_view = np.lib.stride_tricks.sliding_window_view(s.values, K)
    tgt_view = np.lib.stride_tricks.sliding_window_view(s.values, H)
    return WindowedDataset(
        x_lags=lag_view[starts - K].copy(),
        x_exog=encode_calendar(s.start + starts * s.step),
        y=tgt_view[starts].copy(),
        sample_series_index=np.full(len(starts), series_index, dtype=np.int64),
        target_start=starts.astype(np.int64),
    )


def stack(sets: Sequence[WindowedDataset]) -> WindowedDataset:
    if not sets:
        raise EmptyInputError("nothing to stack")
    K, H = sets[0].K, sets[0].H
    for d in sets[1:]:
        if d.K != K or d.H != H:
            raise ShapeError(f"cannot stack K={d.K},H={d.H} onto K={K},H={H}")
    if len(sets) == 1:
        return sets[0]
    return WindowedDataset(
        np.concatenate([d.x_lags for d in sets]),
        np.concatenate([d.x_exog for d in sets]),
        np.concatenate([d.y for d in sets]),
        np.concatenate([d.sample_series_index for d in sets]),
        np.concatenate([d.target_start for d in sets]),
    )


def _default_offset(factor):
    return lambda series_index: series_index % factor


def subsample(
    d: WindowedDataset, factor: int, offset_fn: Callable[[int], int] | None = None
) -> WindowedDataset:
    """Keep every ``factor``-th row of each series, phase set by ``offset_fn``."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return d
    if d.m == 0:
        return d
    offset_fn = offset_fn or _default_offset(factor)
    idx = d.sample_series_index
    rank = np.empty(d.m, dtype=np.int64)
    for s in np.unique(idx):
        rows = np.nonzero(idx == s)[0]
        rank[rows] = np.arange(len(rows))
    phase = {int(s): offset_fn(int(s)) % factor for s in np.unique(idx)}
    offsets = np.array([phase[int(s)] for s in idx], dtype=np.int64)
    return d.take(rank % factor == offsets)


# ------------------------------------------------------------------------ splits


@dataclass
class DatasetSplit:
    train: WindowedDataset
    validation: WindowedDataset
    test: WindowedDataset
    # target ranges [lo, hi) of each segment, positions within every series
    train_range: tuple = (0, 0)
    val_range: tuple = (0, 0)
    test_range: tuple = (0, 0)

    def restrict(self, series_indices) -> "DatasetSplit":
        return DatasetSplit(
            self.train.restrict(series_indices),
            self.validation.restrict(series_indices),
            self.test.restrict(series_indices),
            self.train_range,
            self.val_range,
            self.test_range,
        )


def segment_ranges(T, train_weeks, val_weeks, test_weeks, K=DEFAULT_K):
    """Target ranges of the three segments, anchored at the end of the series."""
    tr, va, te = (w * STEPS_PER_WEEK for w in (train_weeks, val_weeks, test_weeks))
    test_range = (T - te, T)
    val_range = (T - te - va, T - te)
    train_range = (T - te - va - tr, T - te - va)
    if train_range[0] < K:
        raise InsufficientDataError(
            f"{train_weeks}+{val_weeks}+{test_weeks} weeks of targets plus K={K} lags "
            f"need {train_range[1] - train_range[0] + va + te + K} steps, series has {T}"
        )
    return train_range, val_range, test_range


def split_by_time(
    sset: SeriesSet,
    train_weeks: int,
    val_weeks: int,
    test_weeks: int,
    K: int = DEFAULT_K,
    H: int = DEFAULT_H,
    train_stride: int = 1,
    eval_stride: int | None = None,
    train_subsample: int = 1,
) -> DatasetSplit:
    """Time-ordered train/validation/test windows for every series.

    Validation and test windows default to stride ``H`` so each segment's target
    timestamps are covered exactly once. ``train_subsample`` applies
    :func:`subsample` series by series before stacking, which keeps memory low
    and is equivalent to subsampling the stacked set.
    """
    eval_stride = eval_stride or H
    train_range, val_range, test_range = segment_ranges(
        sset.T, train_weeks, val_weeks, test_weeks, K
    )
    parts = {"train": [], "validation": [], "test": []}
    for i, s in enumerate(sset.series):
        tr = make_windows(s, K, H, train_stride, i, train_range)
        if train_subsample > 1:
            tr = subsample(tr, train_subsample)
        parts["train"].append(tr)
        parts["validation"].append(make_windows(s, K, H, eval_stride, i, val_range))
        parts["test"].append(make_windows(s, K, H, eval_stride, i, test_range))
    return DatasetSplit(
        stack(parts["train"]),
        stack(parts["validation"]),
        stack(parts["test"]),
        train_range,
        val_range,
        test_range,
    )


def train_scales(sset: SeriesSet, train_range) -> np.ndarray:
    """Per-series mean load over the training targets, used to put series on a common scale."""
    lo, hi = train_range
    scales = sset.values()[:, lo:hi].mean(axis=1)
    return np.where(scales > 0, scales, 1.0)
