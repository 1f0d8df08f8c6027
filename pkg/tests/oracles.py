"""Independent reference computations used by the test-suite."""

from __future__ import annotations

import itertools

import numpy as np

from globalload.model import ModelParams, _forward, loss_value

FD_EPS = 1e-6
GRAD_RTOL = 1e-5
KINK_TOL = 1e-8
# gradients smaller than this are compared absolutely (finite differences lose
# all relative accuracy on coordinates that barely move the loss)
GRAD_SCALE_FLOOR = 1e-4


def _kink_signature(p: ModelParams, x, e, y):
    res, caches = _forward(p, x, e)
    relu = [a > 0 for acts in caches for a in acts[1:]]
    err = np.sign(y - res.forecast)
    return relu, err, np.sign(p.theta)


def _near_kink(p: ModelParams, x, e, y, tol=KINK_TOL) -> bool:
    res, caches = _forward(p, x, e)
    blocks = p.blocks
    for blk, acts in zip(blocks, caches):
        for layer, inp in zip(blk.fc, acts[:-1]):
            if np.any(np.abs(inp @ layer.W + layer.b) < tol):
                return True
    return bool(np.any(np.abs(y - res.forecast) < tol))


def _same(a, b) -> bool:
    relu_a, err_a, th_a = a
    relu_b, err_b, th_b = b
    return (
        all(np.array_equal(u, v) for u, v in zip(relu_a, relu_b))
        and np.array_equal(err_a, err_b)
        and np.array_equal(th_a, th_b)
    )


def fd_gradient_check(p: ModelParams, x, e, y, lam, grads, eps=FD_EPS):
    """Central differences for every coordinate.

    Returns ``(max_rel_err, n_checked, n_skipped)``. A coordinate is skipped
    when the perturbation crosses a ReLU, |error| or |theta| kink, or when
    the base point itself lies within ``KINK_TOL`` of one.
    """
    if _near_kink(p, x, e, y):
        return 0.0, 0, len(p.theta)
    worst, checked, skipped = 0.0, 0, 0
    for j in range(len(p.theta)):
        if abs(p.theta[j]) < KINK_TOL and lam > 0:
            skipped += 1
            continue
        plus, minus = p.copy(), p.copy()
        plus.theta[j] += eps
        minus.theta[j] -= eps
        if not _same(_kink_signature(plus, x, e, y), _kink_signature(minus, x, e, y)):
            skipped += 1
            continue
        fd = (loss_value(plus, x, e, y, lam) - loss_value(minus, x, e, y, lam)) / (2 * eps)
        g = grads.theta[j]
        rel = abs(g - fd) / max(abs(g), abs(fd), GRAD_SCALE_FLOOR)
        worst = max(worst, rel)
        checked += 1
    return worst, checked, skipped


def brute_force_kmeans(points, k):
    """Exact minimum SSE over every assignment of ``points`` into ``k`` non-empty clusters."""
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64)
    onehot = labels[:, :, None] == np.arange(k)[None, None, :]  # (A, n, k)
    counts = onehot.sum(axis=1)
    valid = np.all(counts > 0, axis=1)
    onehot, counts = onehot[valid], counts[valid]
    sums = np.einsum("ank,nd->akd", onehot.astype(np.float64), x)
    sse = np.sum(x**2) - np.sum(np.sum(sums**2, axis=2) / counts, axis=1)
    return float(max(sse.min(), 0.0))


def separated_blobs(rng, n, k, dim, gap=4.0):
    """``n`` points in ``k`` non-empty blobs whose centres are at least ``gap`` apart."""
    while True:
        centres = rng.uniform(-6, 6, size=(k, dim))
        d = np.sqrt(((centres[:, None] - centres[None]) ** 2).sum(axis=2))
        if k == 1 or d[np.triu_indices(k, 1)].min() >= gap:
            break
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    spread = rng.uniform(0.2, 1.0)
    return centres[labels] + spread * rng.standard_normal((n, dim))
