"""Forecast accuracy: seasonal-naive baseline, MASE, MAPE, NMAE and per-series evaluation.

NMAE is normalized by the mean actual load of the evaluation window.
Per-horizon MASE divides each step's absolute error by the MAE of the
seasonal-naive forecast over the whole window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import STEPS_PER_WEEK, SeriesSet, WindowedDataset
from .errors import (
    DegenerateWindow,
    InsufficientDataError,
    NormalizationError,
    ShapeError,
    ZeroActualError,
)

SEASON = STEPS_PER_WEEK


def naive_seasonal(values, origin: int, H: int, S: int = SEASON) -> np.ndarray:
    """Forecast ``values[origin + h]`` with ``values[origin + h - S]``."""
    values = np.asarray(values, dtype=np.float64)
    if origin < S:
        raise InsufficientDataError(f"origin {origin} has less than S={S} steps of history")
    if origin - S + H > len(values):
        raise InsufficientDataError("seasonal-naive source runs past the end of the series")
    return values[origin - S : origin - S + H].copy()


def mase(actual, forecast, history, S: int = SEASON) -> float:
    """MAE of ``forecast`` over the MAE of the seasonal-naive forecast on the same steps.

    ``history`` holds the observations preceding the window.
    """
    actual = np.asarray(actual, dtype=np.float64)
    forecast = np.asarray(forecast, dtype=np.float64)
    full = np.concatenate([np.asarray(history, dtype=np.float64), actual])
    naive = naive_seasonal(full, len(full) - len(actual), len(actual), S)
    mae_naive = np.mean(np.abs(actual - naive))
    if mae_naive == 0:
        raise DegenerateWindow("seasonal-naive MAE is zero")
    return float(np.mean(np.abs(actual - forecast)) / mae_naive)


def mape(actual, forecast) -> float:
    actual = np.asarray(actual, dtype=np.float64)
    if np.any(actual == 0):
        raise ZeroActualError("MAPE is undefined when an actual value is zero")
    return float(np.mean(np.abs(actual - np.asarray(forecast)) / np.abs(actual)) * 100.0)


def nmae(actual, forecast) -> float:
    actual = np.asarray(actual, dtype=np.float64)
    level = np.mean(actual)
    if not level > 0:
        raise NormalizationError("NMAE needs a positive mean actual load")
    return float(np.mean(np.abs(actual - np.asarray(forecast))) / level)


# ------------------------------------------------------------- window batches


def naive_windows(d: WindowedDataset, sset: SeriesSet, S: int = SEASON) -> np.ndarray:
    """Seasonal-naive forecasts for every row of ``d`` (m x H)."""
    values = sset.values()
    if np.any(d.target_start < S):
        raise InsufficientDataError(f"some windows start before S={S}")
    cols = d.target_start[:, None] - S + np.arange(d.H)[None, :]
    return values[d.sample_series_index[:, None], cols]


def window_scores(actual, forecast, naive):
    """Per-window MASE / MAPE / NMAE plus per-step scaled errors.

    Degenerate windows (zero naive MAE) get NaN MASE; windows containing a zero
    actual get NaN MAPE; non-positive mean actual gives NaN NMAE.
    """
    actual, forecast, naive = (np.asarray(a, dtype=np.float64) for a in (actual, forecast, naive))
    if not actual.shape == forecast.shape == naive.shape:
        raise ShapeError("actual, forecast and naive must share a shape")
    abs_err = np.abs(actual - forecast)
    mae_naive = np.mean(np.abs(actual - naive), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        degenerate = mae_naive == 0
        denom = np.where(degenerate, np.nan, mae_naive)
        mase_w = abs_err.mean(axis=1) / denom
        step = abs_err / denom[:, None]
        has_zero = np.any(actual == 0, axis=1)
        mape_w = np.where(has_zero, np.nan, np.mean(abs_err / np.abs(actual), axis=1) * 100.0)
        level = actual.mean(axis=1)
        nmae_w = np.where(level > 0, abs_err.mean(axis=1) / level, np.nan)
    return mase_w, mape_w, nmae_w, step, degenerate


# ----------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    per_series: pd.DataFrame  # id, agg_type, mase, mape, nmae, n_windows, n_degenerate
    per_horizon: pd.DataFrame  # step, group, mase
    group_means: pd.DataFrame  # group, mase, mape, nmae

    @property
    def overall(self) -> dict:
        row = self.group_means.set_index("group").loc["All"]
        return {k: float(row[k]) for k in ("mase", "mape", "nmae")}

    @property
    def n_degenerate(self) -> int:
        return int(self.per_series["n_degenerate"].sum())

    def mase_by_id(self) -> dict:
        return dict(zip(self.per_series["id"], self.per_series["mase"]))


GROUP_ORDER = ["Single", "sTS", "mTS", "lTS", "All"]


def _nanmean(x):
    x = np.asarray(x, dtype=np.float64)
    x = x[~np.isnan(x)]
    return float(x.mean()) if len(x) else float("nan")


def evaluate(forecasts, d: WindowedDataset, sset: SeriesSet, S: int = SEASON) -> EvalResult:
    """Score forecasts for the rows of ``d``; series means are unweighted over series."""
    forecasts = np.asarray(forecasts, dtype=np.float64)
    if forecasts.shape != d.y.shape:
        raise ShapeError(f"forecasts {forecasts.shape} do not match targets {d.y.shape}")
    naive = naive_windows(d, sset, S)
    mase_w, mape_w, nmae_w, step, degenerate = window_scores(d.y, forecasts, naive)

    rows, steps = [], []
    for i in np.unique(d.sample_series_index):
        sel = d.sample_series_index == i
        s = sset.series[int(i)]
        rows.append(
            {
                "id": s.id,
                "agg_type": s.aggregate_type.value,
                "mase": _nanmean(mase_w[sel]),
                "mape": _nanmean(mape_w[sel]),
                "nmae": _nanmean(nmae_w[sel]),
                "n_windows": int(sel.sum()),
                "n_degenerate": int(degenerate[sel].sum()),
            }
        )
        ok = sel & ~degenerate
        steps.append(step[ok].mean(axis=0) if ok.any() else np.full(d.H, np.nan))
    per_series = pd.DataFrame(rows)
    steps = np.array(steps)

    groups, horizon = [], []
    for g in GROUP_ORDER:
        mask = np.ones(len(per_series), bool) if g == "All" else (per_series["agg_type"] == g).to_numpy()
        if not mask.any():
            continue
        groups.append(
            {"group": g, **{k: _nanmean(per_series.loc[mask, k]) for k in ("mase", "mape", "nmae")}}
        )
        for h in range(d.H):
            horizon.append({"step": h, "group": g, "mase": _nanmean(steps[mask, h])})
    return EvalResult(per_series, pd.DataFrame(horizon), pd.DataFrame(groups))


def improvement(baseline: EvalResult, candidate: EvalResult) -> pd.DataFrame:
    """Per-series ``(MASE_baseline - MASE_candidate) * 100``; positive means the candidate is better."""
    a = baseline.per_series[["id", "agg_type", "mase"]].rename(columns={"mase": "mase_baseline"})
    b = candidate.per_series[["id", "mase"]].rename(columns={"mase": "mase_candidate"})
    out = a.merge(b, on="id", how="inner", sort=False)
    out["improvement"] = (out["mase_baseline"] - out["mase_candidate"]) * 100.0
    return out
