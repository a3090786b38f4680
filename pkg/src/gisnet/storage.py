"""Binary dataset cache (``GISD``), checkpoints (``GISW``) and the JSON manifest.

All integers and doubles are little-endian.

Dataset cache::

    b"GISD" | u16 version | 32-byte config sha256 | u64 sample count
    then per sample: u32 payload length | payload
    payload: u8 split (0 train, 1 val, 2 test) | i64 vehicle id | i64 anchor frame
             | i32 lane id | u32 collisions | u16 len + utf-8 source
             | u16 hist | u16 fut | hist*2 f64 history | fut*2 f64 future
             | u16 neighbours, each: i64 id | u8 row | u8 col | hist*2 f64

Checkpoint::

    b"GISW" | u16 version | 32-byte config sha256 | u32 len + utf-8 config JSON
    | u32 tensor count, each: u16 len + utf-8 name | u8 ndim | u32 dims | f64 data
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import DatasetSplit, Neighbor, Sample
from .model import ModelParams
from .social import GridCell

CACHE_MAGIC = b"GISD"
CKPT_MAGIC = b"GISW"
VERSION = 1
SPLITS = ("train", "val", "test")


class StorageError(ValueError):
    pass


def atomic_write(path, payload: bytes) -> None:
    """Write via a temp file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf, self.pos, self.what = buf, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise StorageError(f"{self.what}: truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals if len(vals) > 1 else vals[0]

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)

    def text(self, fmt: str = "<H") -> str:
        return self.take(self.unpack(fmt)).decode("utf-8")


# ---------------------------------------------------------------- dataset cache

def _encode_sample(s: Sample, split: int) -> bytes:
    src = s.source.encode("utf-8")
    hist, fut = s.history.shape[0], s.future.shape[0]
    out = io.BytesIO()
    out.write(struct.pack("<BqqiI", split, s.vehicle_id, s.anchor_frame, s.lane_id, s.collisions))
    out.write(struct.pack("<H", len(src)) + src)
    out.write(struct.pack("<HH", hist, fut))
    out.write(_f64(s.history))
    out.write(_f64(s.future))
    out.write(struct.pack("<H", len(s.neighbors)))
    for nb in s.neighbors:
        out.write(struct.pack("<qBB", nb.vehicle_id, nb.cell.row, nb.cell.col))
        out.write(_f64(nb.history))
    return out.getvalue()


def _decode_sample(r: _Reader) -> tuple:
    split, vid, anchor, lane, collisions = r.unpack("<BqqiI")
    source = r.text()
    hist, fut = r.unpack("<HH")
    history = r.array((hist, 2))
    future = r.array((fut, 2))
    neighbors = []
    for _ in range(r.unpack("<H")):
        nid, row, col = r.unpack("<qBB")
        neighbors.append(Neighbor(nid, r.array((hist, 2)), GridCell(row, col)))
    return split, Sample(history, tuple(neighbors), future, source, vid, anchor, lane, collisions)


def dataset_bytes(split: DatasetSplit, cfg: RunConfig) -> bytes:
    parts = [(0, s) for s in split.train] + [(1, s) for s in split.val] + [(2, s) for s in split.test]
    out = io.BytesIO()
    out.write(CACHE_MAGIC + struct.pack("<H", VERSION) + cfg.digest() + struct.pack("<Q", len(parts)))
    for k, s in parts:
        payload = _encode_sample(s, k)
        out.write(struct.pack("<I", len(payload)) + payload)
    return out.getvalue()


def save_dataset(path, split: DatasetSplit, cfg: RunConfig) -> dict:
    """Write the cache and its ``.json`` sidecar manifest; returns the manifest."""
    blob = dataset_bytes(split, cfg)
    atomic_write(path, blob)
    manifest = build_manifest(split, cfg, blob)
    atomic_write(manifest_path(path), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return manifest


def load_dataset(path) -> tuple:
    """Returns (DatasetSplit, config hash hex)."""
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    if r.take(4) != CACHE_MAGIC:
        raise StorageError(f"{path}: not a dataset cache (bad magic)")
    version = r.unpack("<H")
    if version != VERSION:
        raise StorageError(f"{path}: unsupported cache version {version}")
    digest = r.take(32).hex()
    parts = ([], [], [])
    for _ in range(r.unpack("<Q")):
        length = r.unpack("<I")
        sub = _Reader(r.take(length), str(path))
        k, sample = _decode_sample(sub)
        if k > 2:
            raise StorageError(f"{path}: bad split tag {k}")
        parts[k].append(sample)
    seed = None
    mpath = manifest_path(path)
    if mpath.exists():
        seed = json.loads(mpath.read_text()).get("seed")
    return DatasetSplit(parts[0], parts[1], parts[2], seed if seed is not None else 0), digest


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _keys_hash(samples) -> str:
    h = hashlib.sha256()
    for key in sorted(s.key for s in samples):
        h.update(repr(key).encode())
    return h.hexdigest()


def build_manifest(split: DatasetSplit, cfg: RunConfig, blob: bytes) -> dict:
    return {
        "format": "GISD",
        "version": VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": split.seed,
        "split_ratios": list(split.ratios),
        "counts": {name: len(split.part(name)) for name in SPLITS},
        "split_hashes": {name: _keys_hash(split.part(name)) for name in SPLITS},
        "cache_sha256": hashlib.sha256(blob).hexdigest(),
    }


# ---------------------------------------------------------------- checkpoints

def checkpoint_bytes(params: ModelParams) -> bytes:
    cfg = params.config
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    named = params.named_tensors()
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<H", VERSION) + cfg.digest())
    out.write(struct.pack("<I", len(cfg_json)) + cfg_json)
    out.write(struct.pack("<I", len(named)))
    for name, arr in named.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(_f64(arr))
    return out.getvalue()


def save_checkpoint(path, params: ModelParams) -> None:
    atomic_write(path, checkpoint_bytes(params))


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    if r.take(4) != CKPT_MAGIC:
        raise StorageError(f"{path}: not a checkpoint (bad magic)")
    version = r.unpack("<H")
    if version != VERSION:
        raise StorageError(f"{path}: unsupported checkpoint version {version}")
    digest = r.take(32).hex()
    cfg = RunConfig.from_dict(json.loads(r.text("<I")))
    if cfg.hash() != digest:
        raise StorageError(f"{path}: embedded config does not match its hash")
    named = {}
    for _ in range(r.unpack("<I")):
        name = r.text()
        ndim = r.unpack("<B")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        named[name] = r.array(shape)
    return ModelParams.from_named(named, cfg)
