"""NGSIM-style trajectory ingestion, segmentation, splitting and synthetic scenes.

Coordinates are (lateral, longitudinal) in meters throughout: NGSIM's
Local_X is lateral, Local_Y is the direction of travel.
"""
from __future__ import annotations

import csv
import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .config import DataConfig
from .social import GridCell, GridSpec, assign_grid_cell, resolve_collisions

REQUIRED_COLUMNS = ("Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "Lane_ID")
SCENARIOS = ("cv", "lane-change", "congestion", "crowded")


class FormatError(ValueError):
    """Malformed trajectory file."""


@dataclass(frozen=True, slots=True)
class VehicleRecord:
    vehicle_id: int
    frame_id: int
    x: float  # lateral, m
    y: float  # longitudinal, m
    lane_id: int


@dataclass(frozen=True)
class Trajectory:
    vehicle_id: int
    frames: np.ndarray  # 10 Hz frame ids
    xy: np.ndarray  # (n, 2)
    lanes: np.ndarray

    def __len__(self) -> int:
        return len(self.frames)


class Neighbor(NamedTuple):
    vehicle_id: int
    history: np.ndarray  # (hist, 2) absolute
    cell: GridCell


@dataclass(frozen=True)
class Sample:
    history: np.ndarray  # (hist, 2) absolute
    neighbors: tuple  # of Neighbor, sorted by vehicle id
    future: np.ndarray  # (fut, 2) relative to history[-1]
    source: str
    vehicle_id: int
    anchor_frame: int
    lane_id: int
    collisions: int = 0

    @property
    def key(self) -> tuple:
        return (self.source, self.vehicle_id, self.anchor_frame)

    @property
    def origin(self) -> np.ndarray:
        return self.history[-1]

    def vehicle_histories(self) -> list:
        return [self.history] + [n.history for n in self.neighbors]


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int
    ratios: tuple = (0.7, 0.1, 0.2)

    def part(self, name: str) -> list:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def all(self) -> list:
        return self.train + self.val + self.test


# ---------------------------------------------------------------- parsing

def parse_trajectory_csv(path, feet_to_meters: float = 0.3048) -> list:
    """Read the NGSIM export layout; extra columns are ignored."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        cols = {}
        for name in REQUIRED_COLUMNS:
            if name not in header:
                raise FormatError(f"{path}: missing required column {name!r}")
            cols[name] = header.index(name)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vid = _as_int(row[cols["Vehicle_ID"]])
                frame = _as_int(row[cols["Frame_ID"]])
                x = float(row[cols["Local_X"]]) * feet_to_meters
                y = float(row[cols["Local_Y"]]) * feet_to_meters
                lane = _as_int(row[cols["Lane_ID"]])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: bad field ({exc})") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise FormatError(f"{path}:{lineno}: non-finite coordinate")
            if lane < 1:
                raise FormatError(f"{path}:{lineno}: Lane_ID must be >= 1, got {lane}")
            records.append(VehicleRecord(vid, frame, x, y, lane))
    records.sort(key=lambda r: (r.vehicle_id, r.frame_id))
    for a, b in zip(records, records[1:]):
        if (a.vehicle_id, a.frame_id) == (b.vehicle_id, b.frame_id):
            raise FormatError(f"{path}: duplicate record for vehicle {a.vehicle_id} frame {a.frame_id}")
    return records


def _as_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def write_trajectory_csv(records: Iterable[VehicleRecord], path, feet_to_meters: float = 0.3048) -> None:
    """Inverse of parse_trajectory_csv (meters back to feet)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS)
        for r in records:
            w.writerow([r.vehicle_id, r.frame_id, repr(float(r.x) / feet_to_meters), repr(float(r.y) / feet_to_meters), r.lane_id])


def group_by_vehicle(records: Sequence[VehicleRecord]) -> dict:
    out = defaultdict(list)
    for r in records:
        out[r.vehicle_id].append(r)
    for v in out.values():
        v.sort(key=lambda r: r.frame_id)
    return dict(out)


def resample_5hz(records: Sequence[VehicleRecord], decimation: int = 2) -> list:
    """Split at frame gaps, then keep every ``decimation``-th frame of each piece."""
    records = sorted(records, key=lambda r: r.frame_id)
    if not records:
        return []
    pieces, current = [], [records[0]]
    for prev, r in zip(records, records[1:]):
        if r.frame_id - prev.frame_id > 1:
            pieces.append(current)
            current = []
        current.append(r)
    pieces.append(current)
    out = []
    for piece in pieces:
        kept = piece[::decimation]
        out.append(
            Trajectory(
                kept[0].vehicle_id,
                np.array([r.frame_id for r in kept], dtype=np.int64),
                np.array([(r.x, r.y) for r in kept], dtype=np.float64),
                np.array([r.lane_id for r in kept], dtype=np.int64),
            )
        )
    return out


class SceneIndex:
    """Full-rate lookup: frame id -> {vehicle id: (x, y, lane)}."""

    def __init__(self, records: Iterable[VehicleRecord]):
        self.frames: dict = defaultdict(dict)
        for r in records:
            self.frames[r.frame_id][r.vehicle_id] = (r.x, r.y, r.lane_id)

    def vehicles_at(self, frame: int) -> dict:
        return self.frames.get(frame, {})

    def history(self, vehicle_id: int, frame_ids: Sequence[int]) -> Optional[np.ndarray]:
        pts = []
        for f in frame_ids:
            entry = self.frames.get(int(f), {}).get(vehicle_id)
            if entry is None:
                return None
            pts.append(entry[:2])
        return np.array(pts, dtype=np.float64)


def segment_samples(
    trajectories: Sequence[Trajectory],
    index: SceneIndex,
    data: DataConfig = DataConfig(),
    grid: GridSpec = GridSpec(),
    source: str = "",
    targets: Optional[set] = None,
) -> list:
    """Cut resampled trajectories into history/future samples with neighbours."""
    hist, fut, stride = data.hist_frames, data.fut_frames, data.anchor_stride
    samples = []
    for traj in trajectories:
        if targets is not None and traj.vehicle_id not in targets:
            continue
        for a in range(hist - 1, len(traj) - fut, stride):
            history = traj.xy[a - hist + 1 : a + 1].copy()
            future = traj.xy[a + 1 : a + 1 + fut] - traj.xy[a]
            anchor = int(traj.frames[a])
            frame_ids = traj.frames[a - hist + 1 : a + 1]
            lane = int(traj.lanes[a])
            # the target holds the centre cell; a neighbour landing there is a collision
            cand, cells, gaps = [None], [grid.center], [0.0]
            for vid, (nx, ny, nlane) in sorted(index.vehicles_at(anchor).items()):
                if vid == traj.vehicle_id:
                    continue
                nh = index.history(vid, frame_ids)
                if nh is None:
                    continue
                cell = assign_grid_cell(traj.xy[a], (nx, ny), (lane, nlane), grid)
                if cell is None:
                    continue
                cand.append(Neighbor(vid, nh, cell))
                cells.append(cell)
                gaps.append(ny - traj.xy[a, 1])
            kept, collisions = resolve_collisions(cells, gaps)
            samples.append(
                Sample(history, tuple(cand[k] for k in kept if k > 0), future, source, traj.vehicle_id, anchor, lane, collisions)
            )
    return samples


def samples_from_records(
    records: Sequence[VehicleRecord],
    data: DataConfig = DataConfig(),
    grid: GridSpec = GridSpec(),
    source: str = "",
    targets: Optional[set] = None,
) -> list:
    index = SceneIndex(records)
    trajs = []
    for vid, recs in sorted(group_by_vehicle(records).items()):
        if targets is None or vid in targets:
            trajs.extend(resample_5hz(recs, data.decimation))
    return segment_samples(trajs, index, data, grid, source, targets)


# ---------------------------------------------------------------- splitting

def split_dataset(samples: Sequence[Sample], seed: int, ratios=(0.7, 0.1, 0.2)) -> DatasetSplit:
    """Assign whole target vehicles to train/val/test.

    Vehicles are ordered by a seeded hash of (source, id) and cut at the
    requested proportions, so every sample of a vehicle lands in one split.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    vehicles = sorted({(s.source, s.vehicle_id) for s in samples})
    vehicles.sort(key=lambda v: hashlib.sha256(f"{seed}:{v[0]}:{v[1]}".encode()).digest())
    n = len(vehicles)
    n_train = int(round(ratios[0] * n))
    n_val = min(n - n_train, int(round(ratios[1] * n)))
    if n == 1:
        n_train, n_val = 1, 0
    which = {}
    for i, v in enumerate(vehicles):
        which[v] = 0 if i < n_train else (1 if i < n_train + n_val else 2)
    parts = ([], [], [])
    for s in samples:
        parts[which[(s.source, s.vehicle_id)]].append(s)
    return DatasetSplit(parts[0], parts[1], parts[2], seed, ratios)


# ---------------------------------------------------------------- synthetic scenes

N_LANES = 5
SCENE_GAP = 20  # empty frames between consecutive scenes
LANE_CHANGE_DURATION = 4.0
# onset window (s); at least 0.4 s of the manoeuvre precedes the 2.8 s anchor
LANE_CHANGE_START = (0.0, 2.4)


@dataclass
class _Vehicle:
    lane0: int
    x: np.ndarray  # lateral, noiseless
    y: np.ndarray  # longitudinal, noiseless


def generate_synthetic(
    scenario: str,
    n_scenes: int,
    seed: int,
    noise_std: float = 0.1,
    data: DataConfig = DataConfig(),
    grid: GridSpec = GridSpec(),
) -> list:
    """One sample per scene, targeting the scene's designated vehicle."""
    records, targets = synthetic_records(scenario, n_scenes, seed, noise_std, data, grid)
    return samples_from_records(records, data, grid, source=f"synthetic:{scenario}", targets=targets)


def synthetic_records(
    scenario: str,
    n_scenes: int,
    seed: int,
    noise_std: float = 0.1,
    data: DataConfig = DataConfig(),
    grid: GridSpec = GridSpec(),
) -> tuple:
    """10 Hz records for ``n_scenes`` scenes plus the set of target vehicle ids.

    Noise is added only up to the anchor frame so the future stays exact.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    dt = 1.0 / data.source_hz
    n_frames = (data.hist_frames + data.fut_frames) * data.decimation
    anchor_k = (data.hist_frames - 1) * data.decimation
    t = np.arange(n_frames) * dt
    records, targets = [], set()
    for s in range(n_scenes):
        rng = np.random.default_rng([seed, s])
        vehicles = _scene(scenario, rng, t, t[anchor_k], data, grid)
        first_frame = s * (n_frames + SCENE_GAP) + 1
        for j, veh in enumerate(vehicles):
            vid = s * 100 + j + 1
            if j == 0:
                targets.add(vid)
            noise = rng.normal(0.0, noise_std, size=(anchor_k + 1, 2)) if noise_std > 0 else np.zeros((anchor_k + 1, 2))
            for k in range(n_frames):
                lane = int(np.clip(math.floor(veh.x[k] / data.lane_width) + 1, 1, N_LANES))
                nx, ny = (veh.x[k] + noise[k, 0], veh.y[k] + noise[k, 1]) if k <= anchor_k else (veh.x[k], veh.y[k])
                records.append(VehicleRecord(vid, first_frame + k, float(nx), float(ny), lane))
    return records, targets


def _lane_center(lane: int, width: float) -> float:
    return (lane - 0.5) * width


def _lane_change_offset(t: np.ndarray, start: float, width: float, direction: int) -> np.ndarray:
    u = np.clip((t - start) / LANE_CHANGE_DURATION, 0.0, 1.0)
    return direction * width * 0.5 * (1.0 - np.cos(np.pi * u))


def _stop_and_go(rng, t: np.ndarray, vmax: float = 5.0) -> np.ndarray:
    """Longitudinal position from piecewise-constant accelerations, speed in [0, vmax]."""
    dt = t[1] - t[0]
    v = np.empty_like(t)
    v[0] = rng.uniform(0.0, vmax)
    accel, until = 0.0, -1.0
    for k in range(1, len(t)):
        if t[k] >= until:
            accel = rng.uniform(-2.0, 2.0)
            until = t[k] + rng.uniform(1.0, 2.5)
        v[k] = np.clip(v[k - 1] + accel * dt, 0.0, vmax)
    y = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
    return y


def _scene(scenario: str, rng, t: np.ndarray, t_anchor: float, data: DataConfig, grid: GridSpec) -> list:
    width = data.lane_width
    lane = int(rng.integers(2, N_LANES))  # 2..4 keeps both adjacent lanes on the road
    y_anchor = rng.uniform(50.0, 400.0)
    center = grid.center

    if scenario == "crowded":
        n_neighbors = int(rng.integers(7, 15))
    else:
        n_neighbors = int(rng.integers(2, 7))

    others = [(r, c) for r in range(grid.rows) for c in range(grid.cols) if (r, c) != tuple(center)]
    picks = rng.choice(len(others), size=min(n_neighbors, len(others)), replace=False)

    def cv_track(speed, y_at_anchor):
        return y_at_anchor + speed * (t - t_anchor)

    vehicles = []
    # target
    if scenario in ("cv", "lane-change"):
        speed = rng.uniform(18.0, 30.0)
        y = cv_track(speed, y_anchor)
    elif scenario == "congestion":
        prof = _stop_and_go(rng, t)
        y = prof - np.interp(t_anchor, t, prof) + y_anchor
        speed = 2.5
    else:
        speed = rng.uniform(8.0, 16.0)
        y = cv_track(speed, y_anchor)
    x = np.full_like(t, _lane_center(lane, width))
    changes = scenario == "lane-change" or (scenario == "crowded" and rng.random() < 0.5)
    if changes:
        direction = int(rng.choice([-1, 1]))
        lo, hi = LANE_CHANGE_START
        start = rng.uniform(lo, min(hi, t_anchor - 0.4))
        x = x + _lane_change_offset(t, start, width, direction)
    vehicles.append(_Vehicle(lane, x, y))

    for p in picks:
        row, col = others[int(p)]
        nlane = lane + (col - center.col)
        gap = (row - center.row) * grid.cell_length + rng.uniform(-1.5, 1.5)
        ny_anchor = y_anchor + gap
        if scenario == "congestion":
            if col == center.col:
                prof = _stop_and_go(rng, t)
                ny = prof - np.interp(t_anchor, t, prof) + ny_anchor
            else:
                ny = cv_track(rng.uniform(5.0, 15.0), ny_anchor)
        elif scenario == "crowded":
            ny = cv_track(float(np.clip(speed + rng.uniform(-3.0, 3.0), 5.0, 20.0)), ny_anchor)
        else:
            ny = cv_track(float(np.clip(speed + rng.uniform(-3.0, 3.0), 18.0, 30.0)), ny_anchor)
        nx = np.full_like(t, _lane_center(nlane, width) + rng.uniform(-0.3, 0.3))
        vehicles.append(_Vehicle(nlane, nx, ny))
    return vehicles
