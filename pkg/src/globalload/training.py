"""Mini-batch Adam training with plateau / step learning-rate schedules."""

from __future__ import annotations

import csv
import dataclasses
import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplit, WindowedDataset
from .errors import EmptyInputError, NumericError, ShapeError
from .model import ModelConfig, ModelParams, backward, init_params, predict

log = logging.getLogger(__name__)


class Schedule(str, enum.Enum):
    PLATEAU = "plateau"
    STEP = "step"


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-4
    lr0: float = 1e-3
    schedule: Schedule = Schedule.PLATEAU
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-4
    seed: int = 0
    decay_factor: float = 10.0
    max_decays: int = 3  # plateau schedule
    step_epochs: int = 20  # step schedule

    def __post_init__(self):
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1")
        if self.max_epochs < 0 or self.lam < 0:
            raise ValueError("max_epochs and lam must be >= 0")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


GLOBAL_TRAIN = TrainConfig()
FINE_TUNE = TrainConfig(lr0=1e-4, schedule=Schedule.STEP, max_epochs=60)


# ------------------------------------------------------------------------- Adam


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: OptimizerState, theta, grads, lr):
    """One bias-corrected Adam update; returns ``(theta', state')`` without mutating inputs."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if theta.shape != g.shape or g.shape != state.m.shape:
        raise ShapeError("theta, grads and optimizer state must share a shape")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new_theta)):
        raise NumericError("non-finite parameters after Adam step")
    return new_theta, dataclasses.replace(state, m=m, v=v, t=t)


# ---------------------------------------------------------------------- reports


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stop_reason: str = "not started"
    wall_time: float = 0.0
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e, (tl, vl, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr), 1):
                w.writerow([e, f"{tl:.17g}", f"{vl:.17g}", f"{lr:.17g}"])


def validation_loss(p: ModelParams, d: WindowedDataset) -> float:
    """Mean absolute error without the L1 penalty."""
    if d.m == 0:
        return float("nan")
    return float(np.mean(np.abs(d.y - predict(p, d))))


def step_lr(lr0: float, epoch: int, every: int = 20, factor: float = 10.0) -> float:
    """Learning rate in (1-based) ``epoch`` under the step schedule."""
    return lr0 / factor ** ((epoch - 1) // every)


# --------------------------------------------------------------------- training


def _check_shapes(cfg: ModelConfig, d: WindowedDataset):
    if d.K != cfg.K or d.H != cfg.H or d.x_exog.shape[1] != cfg.cat_dim:
        raise ShapeError(
            f"data (K={d.K}, H={d.H}, cat={d.x_exog.shape[1]}) does not match {cfg}"
        )


def _run_epoch(p: ModelParams, opt: OptimizerState, d: WindowedDataset, tc, lr, rng):
    order = rng.permutation(d.m)
    theta, total = p.theta, 0.0
    for lo in range(0, d.m, tc.batch_size):
        rows = order[lo : lo + tc.batch_size]
        params = ModelParams(p.config, theta)
        loss, grads = backward(params, d.x_lags[rows], d.x_exog[rows], d.y[rows], tc.lam)
        theta, opt = adam_step(opt, theta, grads.theta, lr)
        total += loss * len(rows)
    return ModelParams(p.config, theta), opt, total / d.m


def _fit(start: ModelParams, data: DatasetSplit, tc: TrainConfig, include_start: bool):
    """Shared epoch loop; returns the best-validation parameters and the report."""
    t0 = time.perf_counter()
    report = TrainReport()
    train, val = data.train, data.validation
    p = start.copy()
    best, best_val = p.copy(), float("inf")
    if include_start:
        best_val = validation_loss(p, val)
    report.best_val_loss = best_val
    if tc.max_epochs == 0:
        report.stop_reason = "max_epochs=0"
        return best, report

    rng = np.random.default_rng(tc.seed)
    opt = OptimizerState.zeros(len(p))
    lr, decays, stale, plateau_ref = tc.lr0, 0, 0, best_val
    report.stop_reason = "max_epochs"
    for epoch in range(1, tc.max_epochs + 1):
        if tc.schedule is Schedule.STEP:
            lr = step_lr(tc.lr0, epoch, tc.step_epochs, tc.decay_factor)
        p, opt, train_loss = _run_epoch(p, opt, train, tc, lr, rng)
        vl = validation_loss(p, val)
        report.train_loss.append(train_loss)
        report.val_loss.append(vl)
        report.lr.append(lr)
        log.debug("epoch %d train %.6f val %.6f lr %.1e", epoch, train_loss, vl, lr)

        if vl < best_val:
            best, best_val = p.copy(), vl
            report.best_epoch, report.best_val_loss = epoch, vl
        if vl < plateau_ref - tc.min_delta:
            plateau_ref, stale = vl, 0
        else:
            stale += 1
        if stale >= tc.patience:
            if tc.schedule is Schedule.PLATEAU and decays < tc.max_decays:
                decays += 1
                lr /= tc.decay_factor
                stale = 0
                log.info("epoch %d: validation plateau, lr -> %.1e", epoch, lr)
            else:
                report.stop_reason = "plateau" if tc.schedule is Schedule.PLATEAU else "early_stop"
                break
    report.wall_time = time.perf_counter() - t0
    return best, report


def train_global(data: DatasetSplit, cfg: ModelConfig, tc: TrainConfig = GLOBAL_TRAIN):
    """Train from a seeded initialization; returns ``(params, report)``."""
    if data.train.m == 0 or data.validation.m == 0:
        raise EmptyInputError("training needs training and validation rows")
    _check_shapes(cfg, data.train)
    start = init_params(cfg, tc.seed)
    return _fit(start, data, tc, include_start=False)


def fine_tune(start: ModelParams, data: DatasetSplit, tc: TrainConfig = FINE_TUNE, with_report=False):
    """Continue training ``start`` on a data subset; the start snapshot competes as epoch 0.

    ``start`` is never modified.
    """
    if data.train.m == 0 or data.validation.m == 0:
        raise EmptyInputError("fine-tuning needs training and validation rows")
    _check_shapes(start.config, data.train)
    best, report = _fit(start, data, tc, include_start=True)
    return (best, report) if with_report else best
