"""Extended N-BEATS network in float64 numpy.

Block 1 sees the lag window plus the one-hot calendar features; every later
block sees only the running lag residual (input minus previous backcasts).
The forecast is the plain sum of the per-block partial forecasts.

All parameters live in one flat ``theta`` vector; per-layer arrays are views
into it, ordered block-major, layer-major, weights before biases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import CAL_DIM, DEFAULT_H, DEFAULT_K, WindowedDataset
from .errors import NumericError, ShapeError

MAGIC = b"GCMODEL"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    K: int = DEFAULT_K
    H: int = DEFAULT_H
    width: int = 512
    n_blocks: int = 3
    n_fc_layers: int = 3
    cat_dim: int = CAL_DIM
    share_weights: bool = False

    def __post_init__(self):
        for name in ("K", "H", "width", "n_blocks", "n_fc_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cat_dim < 0:
            raise ValueError("cat_dim must be >= 0")
        if self.share_weights:
            raise ValueError("weight sharing across blocks is not supported")


def layer_shapes(cfg: ModelConfig) -> list:
    """``(block, kind, layer, weight_shape, bias_len)`` in traversal order."""
    out = []
    for r in range(cfg.n_blocks):
        fan_in = cfg.K + (cfg.cat_dim if r == 0 else 0)
        for j in range(cfg.n_fc_layers):
            out.append((r, "fc", j, (fan_in, cfg.width), cfg.width))
            fan_in = cfg.width
        out.append((r, "backcast", 0, (cfg.width, cfg.K), cfg.K))
        out.append((r, "forecast", 0, (cfg.width, cfg.H), cfg.H))
    return out


def parameter_count(cfg: ModelConfig) -> int:
    K, H, w, R, L = cfg.K, cfg.H, cfg.width, cfg.n_blocks, cfg.n_fc_layers
    per_block = (K * w + w) + (L - 1) * (w * w + w) + (w * K + K) + (w * H + H)
    return R * per_block + cfg.cat_dim * w


class Layer(NamedTuple):
    W: np.ndarray
    b: np.ndarray


@dataclass
class Block:
    fc: list
    backcast: Layer
    forecast: Layer


class ModelParams:
    """Network parameters (or a gradient of the same shape) over a flat vector."""

    def __init__(self, config: ModelConfig, theta: np.ndarray | None = None):
        self.config = config
        n = parameter_count(config)
        if theta is None:
            theta = np.zeros(n)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got shape {theta.shape}")
        self.theta = theta
        self.blocks = self._views()

    def _views(self):
        blocks, pos = [], 0
        current = None
        for r, kind, _, wshape, blen in layer_shapes(self.config):
            if current is None or len(blocks) <= r:
                current = {"fc": []}
                blocks.append(current)
            nw = wshape[0] * wshape[1]
            W = self.theta[pos : pos + nw].reshape(wshape)
            b = self.theta[pos + nw : pos + nw + blen]
            pos += nw + blen
            if kind == "fc":
                current["fc"].append(Layer(W, b))
            else:
                current[kind] = Layer(W, b)
        return [Block(**blk) for blk in blocks]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.theta.copy())

    def __len__(self):
        return len(self.theta)

    def __eq__(self, other):
        return (
            isinstance(other, ModelParams)
            and self.config == other.config
            and np.array_equal(self.theta, other.theta)
        )

    def __repr__(self):
        return f"ModelParams({self.config}, n={len(self.theta)})"


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    p = ModelParams(cfg)
    for blk in p.blocks:
        for layer in [*blk.fc, blk.backcast, blk.forecast]:
            bound = np.sqrt(6.0 / layer.W.shape[0])
            layer.W[...] = rng.uniform(-bound, bound, size=layer.W.shape)
    return p


# ----------------------------------------------------------------- forward pass


class ForwardResult(NamedTuple):
    forecast: np.ndarray
    per_block: list
    residual_trace: list


def _check_inputs(cfg, x_lags, x_exog):
    x_lags = np.asarray(x_lags, dtype=np.float64)
    if x_lags.ndim != 2 or x_lags.shape[1] != cfg.K:
        raise ShapeError(f"x_lags must be m x {cfg.K}, got {x_lags.shape}")
    if x_exog is None:
        x_exog = np.zeros((len(x_lags), cfg.cat_dim))
    x_exog = np.asarray(x_exog, dtype=np.float64)
    if x_exog.shape != (len(x_lags), cfg.cat_dim):
        raise ShapeError(f"x_exog must be {len(x_lags)} x {cfg.cat_dim}, got {x_exog.shape}")
    return x_lags, x_exog


def _forward(p: ModelParams, x_lags, x_exog):
    """Forward pass keeping the per-layer activations needed by backprop."""
    cfg = p.config
    x_lags, x_exog = _check_inputs(cfg, x_lags, x_exog)
    residual = x_lags
    forecast = np.zeros((len(x_lags), cfg.H))
    per_block, trace, caches = [], [], []
    for r, blk in enumerate(p.blocks):
        trace.append(residual)
        h = np.concatenate([residual, x_exog], axis=1) if r == 0 and cfg.cat_dim else residual
        acts = [h]
        for layer in blk.fc:
            h = np.maximum(h @ layer.W + layer.b, 0.0)
            acts.append(h)
        back = h @ blk.backcast.W + blk.backcast.b
        part = h @ blk.forecast.W + blk.forecast.b
        per_block.append(part)
        forecast = forecast + part
        residual = residual - back
        caches.append(acts)
    if not np.all(np.isfinite(forecast)):
        raise NumericError("non-finite forecast")
    return ForwardResult(forecast, per_block, trace), caches


def forward(p: ModelParams, x_lags, x_exog=None) -> ForwardResult:
    return _forward(p, x_lags, x_exog)[0]


def predict(p: ModelParams, d: WindowedDataset) -> np.ndarray:
    return forward(p, d.x_lags, d.x_exog).forecast


# --------------------------------------------------------------------- backprop


def l1_sign(x):
    """Subgradient of |x| with sign(0) = 0."""
    return np.sign(x)


def loss_value(p: ModelParams, x_lags, x_exog, y, lam: float = 0.0) -> float:
    out = forward(p, x_lags, x_exog)
    loss = float(np.mean(np.abs(np.asarray(y) - out.forecast)))
    if lam:
        loss += lam * float(np.sum(np.abs(p.theta)))
    return loss


def backward(p: ModelParams, x_lags, x_exog, y, lam: float = 0.0):
    """Objective ``mean|y - f(x)| + lam * sum|theta|`` and its exact subgradient.

    Returns ``(loss, grads)`` with ``grads`` a :class:`ModelParams` holding the
    gradient in the same layout as ``p``.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    cfg = p.config
    out, caches = _forward(p, x_lags, x_exog)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != out.forecast.shape:
        raise ShapeError(f"y must be {out.forecast.shape}, got {y.shape}")
    err = out.forecast - y
    loss = float(np.mean(np.abs(err)))
    d_forecast = l1_sign(err) / err.size

    grads = ModelParams(cfg)
    d_residual_next = np.zeros_like(out.residual_trace[0])  # gradient wrt residual leaving block
    for r in reversed(range(cfg.n_blocks)):
        blk, g, acts = p.blocks[r], grads.blocks[r], caches[r]
        h = acts[-1]
        d_back = -d_residual_next
        g.forecast.W[...] = h.T @ d_forecast
        g.forecast.b[...] = d_forecast.sum(axis=0)
        g.backcast.W[...] = h.T @ d_back
        g.backcast.b[...] = d_back.sum(axis=0)
        dh = d_forecast @ blk.forecast.W.T + d_back @ blk.backcast.W.T
        for j in reversed(range(cfg.n_fc_layers)):
            dh = dh * (acts[j + 1] > 0)
            g.fc[j].W[...] = acts[j].T @ dh
            g.fc[j].b[...] = dh.sum(axis=0)
            dh = dh @ blk.fc[j].W.T
        # the block input is the incoming residual (first K columns for block 1)
        d_residual_next = d_residual_next + dh[:, : cfg.K]

    if lam:
        loss += lam * float(np.sum(np.abs(p.theta)))
        grads.theta += lam * l1_sign(p.theta)
    if not (np.isfinite(loss) and np.all(np.isfinite(grads.theta))):
        raise NumericError("non-finite loss or gradient")
    return loss, grads


# ------------------------------------------------------------------ persistence

_HEADER = struct.Struct("<7sI7q")


def save_model(p: ModelParams, path) -> None:
    c = p.config
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, c.K, c.H, c.width, c.n_blocks, c.n_fc_layers, c.cat_dim,
        int(c.share_weights),
    )
    Path(path).write_bytes(header + p.theta.astype("<f8").tobytes())


def load_model(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated model file")
    magic, version, K, H, w, R, L, cat, share = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a model container")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    cfg = ModelConfig(K=K, H=H, width=w, n_blocks=R, n_fc_layers=L, cat_dim=cat,
                      share_weights=bool(share))
    theta = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return ModelParams(cfg, theta)
