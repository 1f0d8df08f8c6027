"""Feature-based split clustering of series into a hierarchy of partitions.

Level ``l`` of the hierarchy partitions the series into ``l + 1`` clusters. Each
level is obtained from the previous one by splitting the cluster with the
largest SSE (centroid nudged by +/- eps along its highest-variance feature)
and re-running Lloyd iterations over all centroids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import STEPS_PER_DAY, STEPS_PER_WEEK, Series
from .errors import CardinalityError, InsufficientDataError

FEATURE_NAMES = (
    "mean",
    "variance",
    "acf1",
    "trend",
    "linearity",
    "seasonal_strength_day",
    "seasonal_strength_week",
    "cov",
)
MAX_LLOYD_ITER = 300


# ------------------------------------------------------------------- features


def acf1(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean()
    denom = np.dot(xc, xc)
    return float(np.dot(xc[:-1], xc[1:]) / denom) if denom > 0 else 0.0


def seasonal_strength(x, period: int) -> float:
    """``1 - Var(remainder) / Var(seasonal + remainder)`` with per-phase mean seasonality."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean()
    total = np.var(xc)
    if total == 0:
        return 0.0
    phase = np.arange(len(x)) % period
    seasonal = (np.bincount(phase, weights=xc, minlength=period) / np.bincount(phase, minlength=period))[phase]
    remainder = xc - seasonal
    return float(np.clip(1.0 - np.var(remainder) / total, 0.0, 1.0))


def _poly_fit(x):
    """R^2 of the linear fit and the linear coefficient of an orthonormal quadratic fit."""
    n = len(x)
    t = np.arange(n, dtype=np.float64)
    sd = x.std()
    if sd == 0:
        return 0.0, 0.0
    z = (x - x.mean()) / sd
    # orthonormal polynomial basis over t (columns: constant, linear, quadratic)
    q, _ = np.linalg.qr(np.vander(t - t.mean(), 3, increasing=True))
    q = q * np.sign(q[-1])  # deterministic orientation: increasing linear term
    coefs = q.T @ z
    fitted_lin = q[:, :2] @ coefs[:2]
    r2 = 1.0 - np.sum((z - fitted_lin) ** 2) / np.sum(z**2)
    return float(np.clip(r2, 0.0, 1.0)), float(coefs[1])


def extract_features(s: Series | np.ndarray, train_range: tuple | None = None) -> np.ndarray:
    """Eight descriptive features (see ``FEATURE_NAMES``) over ``values[lo:hi]``."""
    values = s.values if isinstance(s, Series) else np.asarray(s, dtype=np.float64)
    lo, hi = train_range if train_range is not None else (0, len(values))
    x = values[lo:hi]
    if len(x) < 2 * STEPS_PER_WEEK:
        raise InsufficientDataError(f"feature window has {len(x)} steps, need {2 * STEPS_PER_WEEK}")
    mean, var = float(x.mean()), float(x.var())
    trend, linearity = _poly_fit(x)
    cov = float(np.sqrt(var) / mean) if mean != 0 else 0.0
    return np.array(
        [
            mean,
            var,
            acf1(x),
            trend,
            linearity,
            seasonal_strength(x, STEPS_PER_DAY),
            seasonal_strength(x, STEPS_PER_WEEK),
            cov,
        ]
    )


def standardize(features):
    """Column z-scores with population std; constant columns become zeros.

    Returns ``(z, {"mean": ..., "std": ...})``.
    """
    f = np.asarray(features, dtype=np.float64)
    mu = f.mean(axis=0)
    sd = f.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    z = np.where(sd > 0, (f - mu) / safe, 0.0)
    return z, {"mean": mu, "std": sd}


# -------------------------------------------------------------------- k-means


def sse(points, assignments, centroids) -> float:
    return float(np.sum((points - centroids[assignments]) ** 2))


def _nearest(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)  # first minimum: ties go to the lowest index


def _repair_empty(points, assign, centroids):
    k = len(centroids)
    for c in range(k):
        counts = np.bincount(assign, minlength=k)
        if counts[c]:
            continue
        dist = ((points - centroids[assign]) ** 2).sum(axis=1)
        donors = counts[assign] > 1
        dist = np.where(donors, dist, -np.inf)
        victim = int(np.argmax(dist))
        assign[victim] = c
        centroids[c] = points[victim]
    return assign


def _means(points, assign, k):
    out = np.zeros((k, points.shape[1]))
    np.add.at(out, assign, points)
    return out / np.bincount(assign, minlength=k)[:, None]


def kmeans_refine(points, centroids, max_iter: int = MAX_LLOYD_ITER):
    """Lloyd iterations from the given centroids until assignments stop changing.

    An empty cluster takes over the point farthest from its own centroid.
    Returns ``(assignments, centroids)``.
    """
    points = np.asarray(points, dtype=np.float64)
    centroids = np.array(centroids, dtype=np.float64)
    k = len(centroids)
    if k > len(points):
        raise CardinalityError(f"k={k} exceeds the number of points {len(points)}")
    assign = None
    for _ in range(max_iter):
        new = _repair_empty(points, _nearest(points, centroids), centroids)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        centroids = _means(points, assign, k)
    return assign, centroids


# ------------------------------------------------------------------ hierarchy


@dataclass
class ClusterHierarchy:
    levels: list  # levels[l - 1] = assignment vector with l + 1 clusters
    centroids: list
    seed: int = 0
    eps: float = 0.05
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    feature_std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ids: list = field(default_factory=list)

    @property
    def C(self) -> int:
        return len(self.levels) + 1

    @property
    def N(self) -> int:
        return len(self.levels[0]) if self.levels else len(self.ids)

    def clusters(self, level: int) -> list:
        """Series indices of each cluster at ``level`` (level 0 is everything)."""
        if level == 0:
            return [np.arange(self.N)]
        a = np.asarray(self.levels[level - 1])
        return [np.nonzero(a == i)[0] for i in range(level + 1)]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "eps": self.eps,
            "ids": list(self.ids),
            "features": list(FEATURE_NAMES),
            "standardization": {
                "mean": [float(v) for v in self.feature_mean],
                "std": [float(v) for v in self.feature_std],
            },
            "levels": [
                {
                    "level": l + 1,
                    "assignments": [int(v) for v in a],
                    "centroids": [[float(v) for v in row] for row in c],
                }
                for l, (a, c) in enumerate(zip(self.levels, self.centroids))
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterHierarchy":
        return cls(
            levels=[np.array(lv["assignments"], dtype=np.int64) for lv in obj["levels"]],
            centroids=[np.array(lv["centroids"], dtype=np.float64) for lv in obj["levels"]],
            seed=obj["seed"],
            eps=obj["eps"],
            feature_mean=np.array(obj["standardization"]["mean"]),
            feature_std=np.array(obj["standardization"]["std"]),
            ids=list(obj.get("ids", [])),
        )

    @classmethod
    def load(cls, path) -> "ClusterHierarchy":
        return cls.from_json(json.loads(Path(path).read_text()))


def level_sse(points, hierarchy: ClusterHierarchy, level: int) -> float:
    if level == 0:
        return float(np.sum((points - points.mean(axis=0)) ** 2))
    return sse(points, hierarchy.levels[level - 1], hierarchy.centroids[level - 1])


def split_levels(points, C: int, eps: float = 0.05):
    """Yield ``(assignments, centroids)`` for 2..C clusters by successive splitting.

    Each step nudges the centroid of the largest-SSE cluster by +/- ``eps`` along
    that cluster's highest-variance coordinate and refines all centroids.
    """
    points = np.asarray(points, dtype=np.float64)
    if C > len(points):
        raise CardinalityError(f"C={C} clusters requested for {len(points)} points")
    assign = np.zeros(len(points), dtype=np.int64)
    centroids = points.mean(axis=0, keepdims=True)
    for k in range(1, C):
        per_cluster = [np.sum((points[assign == c] - centroids[c]) ** 2) for c in range(k)]
        target = int(np.argmax(per_cluster))
        axis = int(np.argmax(points[assign == target].var(axis=0)))
        nudge = np.zeros(points.shape[1])
        nudge[axis] = eps
        seeds = np.vstack([centroids, centroids[target] - nudge])
        seeds[target] = centroids[target] + nudge
        assign, centroids = kmeans_refine(points, seeds)
        yield assign.copy(), centroids.copy()


def build_hierarchy(features, C: int, seed: int = 0, eps: float = 0.05, ids=None) -> ClusterHierarchy:
    """Grow a hierarchy with 2..C clusters from standardized series features.

    The procedure is deterministic; ``seed`` is recorded for provenance only.
    """
    features = np.asarray(features, dtype=np.float64)
    if C > len(features):
        raise CardinalityError(f"C={C} clusters requested for {len(features)} series")
    if C < 2:
        raise CardinalityError("C must be >= 2")
    z, params = standardize(features)
    levels, cents = [], []
    for assign, centroids in split_levels(z, C, eps):
        levels.append(assign)
        cents.append(centroids)
    return ClusterHierarchy(
        levels, cents, seed, eps, params["mean"], params["std"], list(ids) if ids is not None else []
    )
