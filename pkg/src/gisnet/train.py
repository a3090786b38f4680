"""Loss, Adam, the training loop and RMSE evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward, scale, square, sub, sum_all
from .config import RunConfig
from .kalman import cv_kalman_baseline
from .model import ModelParams, bind, fit_normalizer, forward_batch, init_params, predict

log = logging.getLogger(__name__)


class InvariantError(RuntimeError):
    """Internal consistency violated (maps to CLI exit code 3)."""


# ---------------------------------------------------------------- loss

def mse_loss(pred: Tensor, truth) -> Tensor:
    """Mean over frames (and batch) of squared Euclidean displacement, m^2."""
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[-1] != 2:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    n_points = int(np.prod(pred.shape[:-1]))
    return scale(sum_all(square(sub(pred, Tensor(truth)))), 1.0 / n_points)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
            0,
            lr,
            beta1,
            beta2,
            eps,
        )


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple:
    """Bias-corrected Adam; returns (new params, state). ``state`` is updated in place."""
    missing = [k for k in params if k not in grads]
    if missing:
        raise InvariantError(f"no gradient for parameters {missing}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, state


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class EvalReport:
    horizons: tuple  # seconds
    rmse: tuple  # meters, one per horizon
    count: int
    config_hash: str

    def to_dict(self) -> dict:
        return {"horizons": list(self.horizons), "rmse": list(self.rmse), "count": self.count, "config_hash": self.config_hash}


def rmse_at_horizons(pred: np.ndarray, truth: np.ndarray, frames: Sequence[int]) -> tuple:
    """sqrt(mean_m |pred_m(T) - truth_m(T)|^2) for each horizon frame T."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if pred.shape[0] == 0:
        raise ValueError("cannot evaluate an empty set")
    sq = ((pred - truth) ** 2).sum(axis=-1)  # (N, fut)
    return tuple(float(np.sqrt(sq[:, f].mean())) for f in frames)


def evaluate_rmse(samples: Sequence, params: ModelParams, batch_size: Optional[int] = None) -> EvalReport:
    """Eval-mode RMSE of the model at each whole-second horizon."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty set")
    cfg = params.config
    pred = predict(samples, params, batch_size or cfg.train.batch_size)
    return _report(pred, samples, cfg)


def evaluate_baseline(samples: Sequence, cfg: RunConfig) -> EvalReport:
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty set")
    pred = np.stack([cv_kalman_baseline(s, cfg.data, cfg.kalman) for s in samples])
    return _report(pred, samples, cfg)


def _report(pred: np.ndarray, samples: Sequence, cfg: RunConfig) -> EvalReport:
    frames = cfg.data.horizon_frames()
    truth = np.stack([s.future for s in samples])
    rmse = rmse_at_horizons(pred, truth, frames)
    horizons = tuple(range(1, len(frames) + 1))
    return EvalReport(horizons, rmse, len(samples), cfg.hash())


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)
    best_epoch: int = 0


def train_step(batch: Sequence, params: ModelParams, state: AdamState, rng: np.random.Generator) -> float:
    """One forward/backward/Adam update on ``batch``; returns the batch loss."""
    with Tape() as tape:
        weights, tracked = bind(params, tape)
        pred = forward_batch(batch, params, weights, train=True, rng=rng)
        loss = mse_loss(pred, np.stack([s.future for s in batch]))
    grads = backward(tape, loss)
    params.arrays, _ = adam_step(params.arrays, {k: grads[t] for k, t in tracked.items()}, state)
    return loss.item()


def train_loop(
    train: Sequence,
    val: Sequence,
    cfg: RunConfig,
    on_epoch: Optional[Callable[[dict], None]] = None,
    on_improve: Optional[Callable[[ModelParams], None]] = None,
    params: Optional[ModelParams] = None,
) -> TrainResult:
    """Mini-batch Adam with early stopping on mean validation RMSE.

    Validation falls back to the training set when ``val`` is empty.
    ``on_improve`` receives the best parameters whenever they change
    (the CLI writes the checkpoint there).
    """
    if len(train) == 0:
        raise ValueError("training split is empty")
    tc = cfg.train
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(cfg, np.random.default_rng(cfg.seed))
        fit_normalizer(params, train)
    state = AdamState.fresh(params.arrays, tc.lr, tc.beta1, tc.beta2, tc.eps)
    monitor = val if len(val) else train
    best, best_score, best_epoch, stale = params.copy(), np.inf, 0, 0
    history = []
    start = time.perf_counter()
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for i in range(0, len(order), tc.batch_size):
            batch = [train[j] for j in order[i : i + tc.batch_size]]
            total += train_step(batch, params, state, rng) * len(batch)
            count += len(batch)
        report = evaluate_rmse(monitor, params)
        score = float(np.mean(report.rmse))
        entry = {
            "epoch": epoch,
            "train_loss": total / count,
            "val_rmse": list(report.rmse),
            "wall_time": round(time.perf_counter() - start, 3),
        }
        history.append(entry)
        if on_epoch:
            on_epoch(entry)
        if not np.isfinite(entry["train_loss"]):
            raise InvariantError(f"training diverged at epoch {epoch}")
        if score < best_score:
            best, best_score, best_epoch, stale = params.copy(), score, epoch, 0
            if on_improve:
                on_improve(best)
        else:
            stale += 1
            if stale >= tc.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    return TrainResult(best, history, best_epoch)


def format_log_line(entry: dict) -> str:
    return json.dumps(entry, sort_keys=True)
