"""Feature fusion and the LSTM trajectory decoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (
    BatchNormState,
    LSTMWeights,
    ShapeError,
    add,
    mul,
    Tensor,
    batchnorm,
    concat,
    cumsum,
    dense,
    dropout,
    lstm_step,
    reshape,
    stack,
    zeros,
)


@dataclass(frozen=True)
class DecoderWeights:
    init_w: Tensor  # fused x d_h
    init_b: Tensor
    lstm: LSTMWeights  # fused -> d_h
    head_w: Tensor  # d_h x 2
    head_b: Tensor  # 2


@dataclass(frozen=True)
class FusionWeights:
    gamma: Tensor
    beta: Tensor
    state: BatchNormState


def fuse_features(
    x_traj: Tensor,
    x_social: Tensor,
    x_info: Tensor,
    fusion: FusionWeights,
    rate: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """concat(traj, social, info) -> batch norm -> dropout.

    Accepts single vectors or (batch, d) rows. A single row cannot supply
    batch statistics, so in train mode it is normalised with the running
    statistics (dropout still applies).
    """
    parts = (x_traj, x_social, x_info)
    if len({p.ndim for p in parts}) != 1 or x_traj.ndim not in (1, 2):
        raise ShapeError(f"fuse_features: mixed shapes {[p.shape for p in parts]}")
    single = x_traj.ndim == 1
    if not single and len({p.shape[0] for p in parts}) != 1:
        raise ShapeError(f"fuse_features: batch sizes differ {[p.shape for p in parts]}")
    fused = concat(parts, axis=-1)
    if fused.shape[-1] != fusion.gamma.shape[0]:
        raise ShapeError(f"fused width {fused.shape[-1]} != batch-norm width {fusion.gamma.shape[0]}")
    rows = reshape(fused, (1, fused.shape[0])) if single else fused
    normed = batchnorm(rows, fusion.gamma, fusion.beta, fusion.state, train and rows.shape[0] >= 2)
    out = dropout(normed, rate, train, rng)
    return reshape(out, (fused.shape[0],)) if single else out


def decode_future(fused: Tensor, weights: DecoderWeights, fut_frames: int, norm=None) -> Tensor:
    """Positions relative to the last observed point: (fut, 2) or (batch, fut, 2).

    The fused feature is fed at every step; per-step displacements from the
    output head (de-standardised with ``norm`` = (mean, std) if given) are
    accumulated.
    """
    single = fused.ndim == 1
    f = reshape(fused, (1, fused.shape[0])) if single else fused
    if f.ndim != 2 or f.shape[1] != weights.init_w.shape[0]:
        raise ShapeError(f"decode_future: fused feature {fused.shape} vs init weights {weights.init_w.shape}")
    h = dense(f, weights.init_w, weights.init_b)
    c = zeros(h.shape)
    steps = []
    for _ in range(fut_frames):
        h, c = lstm_step(f, (h, c), weights.lstm)
        steps.append(dense(h, weights.head_w, weights.head_b))
    disp = stack(steps, axis=1)
    if norm is not None:
        mean, std = (np.asarray(a, dtype=np.float64) for a in norm)
        disp = add(mul(disp, Tensor(np.broadcast_to(std, disp.shape))), Tensor(np.broadcast_to(mean, disp.shape)))
    pos = cumsum(disp, axis=1)
    return reshape(pos, (fut_frames, 2)) if single else pos
