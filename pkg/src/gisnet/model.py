"""Parameter store and the end-to-end forward pass over a batch of samples."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .autodiff import BatchNormState, LSTMWeights, Tape, Tensor, take_rows
from .config import RunConfig
from .decoder import DecoderWeights, FusionWeights, decode_future, fuse_features
from .encoder import EncoderWeights, encode_batch
from .graph import (
    block_diagonal_batch,
    build_star_adjacency,
    extract_target_feature,
    gcn_forward,
    normalize_adjacency,
)
from .social import GridSpec, SocialWeights, social_batch, social_conv


def grid_spec(cfg: RunConfig) -> GridSpec:
    return GridSpec(cfg.model.grid_rows, cfg.model.grid_cols, cfg.data.cell_length)


def param_shapes(cfg: RunConfig) -> dict:
    """Name -> shape for every learnable tensor, in canonical order."""
    m = cfg.model
    e, lift, g, d, f = m.embed_size, m.lift_size, m.gcn_size, m.decoder_size, m.fused_size
    (k1h, k1w), (k2h, k2w) = m.conv1_kernel, m.conv2_kernel
    return {
        "enc.lift_w": (2, lift),
        "enc.lift_b": (lift,),
        "enc.lstm.w_x": (lift, 4 * e),
        "enc.lstm.w_h": (e, 4 * e),
        "enc.lstm.b": (4 * e,),
        "soc.conv1_k": (m.conv1_channels, e, k1h, k1w),
        "soc.conv1_b": (m.conv1_channels,),
        "soc.conv2_k": (m.conv2_channels, m.conv1_channels, k2h, k2w),
        "soc.conv2_b": (m.conv2_channels,),
        "gcn.w0": (e, g),
        "gcn.w1": (g, g),
        "fuse.gamma": (f,),
        "fuse.beta": (f,),
        "dec.init_w": (f, d),
        "dec.init_b": (d,),
        "dec.lstm.w_x": (f, 4 * d),
        "dec.lstm.w_h": (d, 4 * d),
        "dec.lstm.b": (4 * d,),
        "dec.head_w": (d, 2),
        "dec.head_b": (2,),
    }


BUFFER_NAMES = ("fuse.running_mean", "fuse.running_var", "norm.delta_mean", "norm.delta_std")


@dataclass
class ModelParams:
    """Learnable arrays plus non-learned buffers.

    ``delta_mean``/``delta_std`` standardise per-step displacements on the way
    into the encoder and out of the decoder; they are fitted once on the
    training split and default to the identity (0, 1).
    """

    arrays: dict  # learnable name -> ndarray
    bn: BatchNormState
    config: RunConfig = field(default_factory=RunConfig)
    delta_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    delta_std: np.ndarray = field(default_factory=lambda: np.ones(2))

    @property
    def norm(self) -> tuple:
        return (self.delta_mean, self.delta_std)

    def copy(self) -> "ModelParams":
        bn = BatchNormState(self.bn.mean.copy(), self.bn.var.copy(), self.bn.momentum, self.bn.eps)
        return ModelParams(
            {k: v.copy() for k, v in self.arrays.items()},
            bn,
            self.config,
            self.delta_mean.copy(),
            self.delta_std.copy(),
        )

    def named_tensors(self) -> dict:
        """Learnables followed by buffers, for serialisation."""
        out = dict(self.arrays)
        out["fuse.running_mean"] = self.bn.mean
        out["fuse.running_var"] = self.bn.var
        out["norm.delta_mean"] = self.delta_mean
        out["norm.delta_std"] = self.delta_std
        return out

    @classmethod
    def from_named(cls, named: dict, config: RunConfig) -> "ModelParams":
        shapes = param_shapes(config)
        missing = [k for k in list(shapes) + list(BUFFER_NAMES) if k not in named]
        if missing:
            raise ValueError(f"checkpoint is missing tensors {missing}")
        for k, shape in shapes.items():
            if tuple(named[k].shape) != shape:
                raise ValueError(f"tensor {k} has shape {named[k].shape}, expected {shape}")
        bn = BatchNormState(
            np.array(named["fuse.running_mean"]),
            np.array(named["fuse.running_var"]),
            config.model.bn_momentum,
            config.model.bn_eps,
        )
        return cls(
            {k: np.array(named[k]) for k in shapes},
            bn,
            config,
            np.array(named["norm.delta_mean"]),
            np.array(named["norm.delta_std"]),
        )


def init_params(cfg: RunConfig, rng: Optional[np.random.Generator] = None) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1, gamma 1."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        if name == "fuse.gamma":
            arrays[name] = np.ones(shape)
        elif len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            fan_out = shape[0] if len(shape) == 4 else shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    for prefix, size in (("enc", cfg.model.embed_size), ("dec", cfg.model.decoder_size)):
        arrays[f"{prefix}.lstm.b"][size : 2 * size] = 1.0
    fsize = cfg.model.fused_size
    bn = BatchNormState(np.zeros(fsize), np.ones(fsize), cfg.model.bn_momentum, cfg.model.bn_eps)
    return ModelParams(arrays, bn, cfg)


def fit_normalizer(params: ModelParams, samples: Sequence) -> None:
    """Set displacement statistics from target histories and futures."""
    steps = []
    for s in samples:
        steps.append(np.diff(s.history, axis=0))
        steps.append(np.diff(np.vstack([np.zeros((1, 2)), s.future]), axis=0))
    d = np.concatenate(steps)
    params.delta_mean = d.mean(axis=0)
    params.delta_std = np.maximum(d.std(axis=0), 1e-3)


def zero_params(cfg: RunConfig) -> ModelParams:
    p = init_params(cfg, np.random.default_rng(0))
    for k in p.arrays:
        p.arrays[k] = np.zeros_like(p.arrays[k])
    p.arrays["fuse.gamma"][:] = 1.0
    return p


@dataclass(frozen=True)
class Weights:
    encoder: EncoderWeights
    social: SocialWeights
    w0: Tensor
    w1: Tensor
    fusion: FusionWeights
    decoder: DecoderWeights


def bind(params: ModelParams, tape: Optional[Tape] = None) -> tuple:
    """Wrap arrays as tensors (watched on ``tape`` if given).

    Returns (Weights, name -> Tensor).
    """
    t = {k: (tape.watch(v) if tape is not None else Tensor(v)) for k, v in params.arrays.items()}
    cfg = params.config
    weights = Weights(
        EncoderWeights(t["enc.lift_w"], t["enc.lift_b"], LSTMWeights(t["enc.lstm.w_x"], t["enc.lstm.w_h"], t["enc.lstm.b"])),
        SocialWeights(t["soc.conv1_k"], t["soc.conv1_b"], t["soc.conv2_k"], t["soc.conv2_b"], tuple(cfg.model.pool)),
        t["gcn.w0"],
        t["gcn.w1"],
        FusionWeights(t["fuse.gamma"], t["fuse.beta"], params.bn),
        DecoderWeights(
            t["dec.init_w"],
            t["dec.init_b"],
            LSTMWeights(t["dec.lstm.w_x"], t["dec.lstm.w_h"], t["dec.lstm.b"]),
            t["dec.head_w"],
            t["dec.head_b"],
        ),
    )
    return weights, t


@lru_cache(maxsize=256)
def _star(n: int):
    return normalize_adjacency(build_star_adjacency(n, 0))


@dataclass(frozen=True)
class SceneBatch:
    """Flattened vehicle layout of a list of samples; the target comes first in each scene."""

    histories: np.ndarray  # (V, hist, 2)
    target_rows: np.ndarray  # (B,)
    slots: np.ndarray  # (V,) flat grid slot per vehicle
    sizes: tuple
    futures: np.ndarray  # (B, fut, 2)

    @property
    def batch(self) -> int:
        return len(self.sizes)


def pack(samples: Sequence, grid: GridSpec) -> SceneBatch:
    hist, slots, sizes, rows = [], [], [], []
    per_scene = grid.rows * grid.cols
    center = grid.center
    for b, s in enumerate(samples):
        rows.append(len(hist))
        hist.append(s.history)
        slots.append(b * per_scene + center.row * grid.cols + center.col)
        for nb in s.neighbors:
            hist.append(nb.history)
            slots.append(b * per_scene + nb.cell.row * grid.cols + nb.cell.col)
        sizes.append(1 + len(s.neighbors))
    return SceneBatch(
        np.stack(hist),
        np.array(rows, dtype=np.int64),
        np.array(slots, dtype=np.int64),
        tuple(sizes),
        np.stack([s.future for s in samples]),
    )


def forward_batch(
    samples: Sequence,
    params: ModelParams,
    weights: Optional[Weights] = None,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Predicted relative futures for a batch, shape (B, fut, 2)."""
    cfg = params.config
    if weights is None:
        weights, _ = bind(params)
    grid = grid_spec(cfg)
    sb = pack(samples, grid)

    emb = encode_batch(sb.histories, weights.encoder, params.norm)
    x_traj = take_rows(emb, sb.target_rows)
    x_social = social_conv(social_batch(emb, sb.slots, sb.batch, grid), weights.social)
    graphs = block_diagonal_batch([_star(n) for n in sb.sizes])
    h = gcn_forward(emb, graphs, weights.w0, weights.w1)
    x_info = extract_target_feature(h, graphs, [0] * sb.batch)
    fused = fuse_features(x_traj, x_social, x_info, weights.fusion, cfg.model.dropout, train, rng)
    return decode_future(fused, weights.decoder, cfg.data.fut_frames, params.norm)


def forward(sample, params: ModelParams, train: bool = False, rng=None) -> np.ndarray:
    """Prediction for one sample as a (fut, 2) array relative to its last observed point."""
    return forward_batch([sample], params, train=train, rng=rng).values[0].copy()


def predict(samples: Sequence, params: ModelParams, batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions for many samples, (N, fut, 2)."""
    weights, _ = bind(params)
    out = [
        forward_batch(samples[i : i + batch_size], params, weights).values
        for i in range(0, len(samples), batch_size)
    ]
    return np.concatenate(out, axis=0)
