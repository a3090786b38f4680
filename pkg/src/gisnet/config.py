"""Run configuration: architecture constants, data protocol, optimiser settings.

Config files are JSON and must list every key; nothing is filled in silently.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    grid_rows: int = 13
    grid_cols: int = 3
    lift_size: int = 32
    embed_size: int = 64
    gcn_size: int = 64
    conv1_channels: int = 64
    conv1_kernel: tuple = (3, 3)
    conv2_channels: int = 16
    conv2_kernel: tuple = (3, 1)
    pool: tuple = (2, 1)
    decoder_size: int = 128
    dropout: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @property
    def center_row(self) -> int:
        return self.grid_rows // 2

    @property
    def center_col(self) -> int:
        return self.grid_cols // 2

    def social_shapes(self) -> list:
        """Spatial shapes after conv1, conv2 and pooling."""
        h, w = self.grid_rows, self.grid_cols
        (k1h, k1w), (k2h, k2w), (ph, pw) = self.conv1_kernel, self.conv2_kernel, self.pool
        s1 = (h - k1h + 1, w - k1w + 1)
        s2 = (s1[0] - k2h + 1, s1[1] - k2w + 1)
        s3 = (s2[0] // ph, s2[1] // pw)
        return [s1, s2, s3]

    @property
    def social_size(self) -> int:
        oh, ow = self.social_shapes()[-1]
        return self.conv2_channels * oh * ow

    @property
    def fused_size(self) -> int:
        return self.embed_size + self.social_size + self.gcn_size


@dataclass(frozen=True)
class DataConfig:
    source_hz: int = 10
    sample_hz: int = 5
    hist_frames: int = 15
    fut_frames: int = 25
    anchor_stride: int = 5
    cell_length: float = 4.57
    lane_width: float = 3.7
    feet_to_meters: float = 0.3048
    split_ratios: tuple = (0.7, 0.1, 0.2)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_hz

    @property
    def decimation(self) -> int:
        return self.source_hz // self.sample_hz

    def horizon_frames(self) -> list:
        """0-based future frame index for each whole-second horizon."""
        n_sec = int(round(self.fut_frames / self.sample_hz))
        return [self.sample_hz * t - 1 for t in range(1, n_sec + 1)]


@dataclass(frozen=True)
class KalmanConfig:
    accel_std: float = 0.5  # m/s^2, white acceleration per step
    meas_var: float = 0.1  # m^2, R = meas_var * I


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    patience: int = 5


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        """Digest of everything that shapes data or model; training knobs excluded."""
        d = self.to_dict()
        payload = {k: d[k] for k in ("model", "data", "kalman")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def digest(self) -> bytes:
        return bytes.fromhex(self.hash())

    def with_seed_from_env(self) -> "RunConfig":
        env = os.environ.get("GISNET_SEED")
        if env is None:
            return self
        try:
            return replace(self, seed=int(env))
        except ValueError as exc:
            raise ConfigError(f"GISNET_SEED must be an integer, got {env!r}") from exc

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, cls, "")
        kw = {}
        for f in fields(cls):
            if f.name == "seed":
                kw["seed"] = _coerce(d["seed"], int, "seed")
            else:
                sub_cls = {"model": ModelConfig, "data": DataConfig, "kalman": KalmanConfig, "train": TrainConfig}[f.name]
                kw[f.name] = _section(d[f.name], sub_cls, f.name)
        cfg = cls(**kw)
        validate(cfg)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d)


def toy_config(**train_overrides) -> RunConfig:
    """Small configuration used for gradient checks and overfit tests (no dropout)."""
    model = ModelConfig(
        grid_rows=5,
        grid_cols=3,
        lift_size=8,
        embed_size=8,
        gcn_size=8,
        conv1_channels=8,
        conv1_kernel=(3, 3),
        conv2_channels=8,
        conv2_kernel=(3, 1),
        pool=(1, 1),
        decoder_size=8,
        dropout=0.0,
    )
    data = DataConfig(hist_frames=5, fut_frames=5)
    return RunConfig(model=model, data=data, train=replace(TrainConfig(), **train_overrides))


def validate(cfg: RunConfig) -> None:
    m, d = cfg.model, cfg.data
    if m.grid_rows < 1 or m.grid_cols < 1:
        raise ConfigError("grid dimensions must be positive")
    for (h, w) in m.social_shapes():
        if h < 1 or w < 1:
            raise ConfigError(f"social conv stack does not fit a {m.grid_rows}x{m.grid_cols} grid")
    if not 0.0 <= m.dropout < 1.0:
        raise ConfigError("dropout must be in [0, 1)")
    if d.source_hz % d.sample_hz:
        raise ConfigError("source_hz must be a multiple of sample_hz")
    if abs(sum(d.split_ratios) - 1.0) > 1e-9 or len(d.split_ratios) != 3:
        raise ConfigError("split_ratios must be three numbers summing to 1")
    if d.hist_frames < 2 or d.fut_frames < 1:
        raise ConfigError("hist_frames must be >= 2 and fut_frames >= 1")
    if cfg.train.batch_size < 1 or cfg.train.epochs < 0:
        raise ConfigError("batch_size must be >= 1 and epochs >= 0")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _check_keys(d, cls, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    want = {f.name for f in fields(cls)}
    missing = sorted(want - d.keys())
    extra = sorted(d.keys() - want)
    if missing:
        raise ConfigError(f"{where or 'config'}: missing keys {missing}")
    if extra:
        raise ConfigError(f"{where or 'config'}: unknown keys {extra}")


def _section(d, cls, name: str):
    _check_keys(d, cls, name)
    kw = {}
    for f in fields(cls):
        default = getattr(cls(), f.name)
        kind = type(default)
        kw[f.name] = _coerce(d[f.name], kind, f"{name}.{f.name}")
    return cls(**kw)


def _coerce(value, kind, where: str):
    if kind is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    return value
