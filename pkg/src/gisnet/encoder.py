"""Shared-weight LSTM embedding of vehicle histories."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import LSTMWeights, Tensor, dense, lstm_step, relu, zeros


@dataclass(frozen=True)
class EncoderWeights:
    lift_w: Tensor  # 2 x lift
    lift_b: Tensor  # lift
    lstm: LSTMWeights  # lift -> embed

    @property
    def embed_size(self) -> int:
        return self.lstm.hidden_size


def history_deltas(histories: np.ndarray, norm=None) -> np.ndarray:
    """Per-step displacement, first step zero; (..., F, 2) -> (..., F, 2).

    ``norm`` = (mean, std) standardises every step after the first.
    """
    h = np.asarray(histories, dtype=np.float64)
    out = np.zeros_like(h)
    d = h[..., 1:, :] - h[..., :-1, :]
    if norm is not None:
        mean, std = norm
        d = (d - np.asarray(mean)) / np.asarray(std)
    out[..., 1:, :] = d
    return out


def encode_batch(histories: np.ndarray, weights: EncoderWeights, norm=None) -> Tensor:
    """Embed a stack of histories (V, F, 2) into a (V, embed) tensor."""
    histories = np.asarray(histories, dtype=np.float64)
    if histories.ndim != 3 or histories.shape[2] != 2:
        raise ValueError(f"histories must be (vehicles, frames, 2), got {histories.shape}")
    deltas = history_deltas(histories, norm)
    v = histories.shape[0]
    h = c = zeros((v, weights.embed_size))
    for t in range(histories.shape[1]):
        step_in = relu(dense(Tensor(deltas[:, t, :]), weights.lift_w, weights.lift_b))
        h, c = lstm_step(step_in, (h, c), weights.lstm)
    return h


def encode_history(history, weights: EncoderWeights, hist_frames: int, norm=None) -> Tensor:
    """Embedding of one vehicle's history; returns a vector of length embed."""
    history = np.asarray(history, dtype=np.float64)
    if history.shape != (hist_frames, 2):
        raise ValueError(f"history must have {hist_frames} frames of (x, y), got {history.shape}")
    deltas = history_deltas(history, norm)
    h = c = zeros((weights.embed_size,))
    for t in range(hist_frames):
        step_in = relu(dense(Tensor(deltas[t]), weights.lift_w, weights.lift_b))
        h, c = lstm_step(step_in, (h, c), weights.lstm)
    return h


def encode_scene(histories: Sequence, weights: EncoderWeights, hist_frames: int, norm=None) -> list:
    """Encode every vehicle of a scene with the same weights; order is preserved."""
    if len(histories) == 0:
        raise ValueError("scene has no vehicles")
    return [encode_history(h, weights, hist_frames, norm) for h in histories]
