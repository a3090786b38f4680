"""Spatial grid placement of vehicle embeddings and the convolutional pooling stack."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    conv2d,
    maxpool2d,
    relu,
    reshape,
    scatter_rows,
    stack,
    transpose,
)


class GridCell(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class GridSpec:
    rows: int = 13
    cols: int = 3
    cell_length: float = 4.57

    @property
    def center(self) -> GridCell:
        return GridCell(self.rows // 2, self.cols // 2)


@dataclass(frozen=True)
class SocialWeights:
    conv1_k: Tensor
    conv1_b: Tensor
    conv2_k: Tensor
    conv2_b: Tensor
    pool: tuple


def assign_grid_cell(target_pos, neighbor_pos, lanes, grid: GridSpec = GridSpec()) -> Optional[GridCell]:
    """Grid cell of a neighbour relative to the target, or None when outside.

    Positions are (lateral, longitudinal) in meters. Columns follow lane ids;
    rows follow the longitudinal gap in cells, rounded half away from zero.
    """
    target_lane, neighbor_lane = lanes
    lane_diff = int(neighbor_lane) - int(target_lane)
    col = grid.center.col + lane_diff
    if not 0 <= col < grid.cols:
        return None
    gap = (float(neighbor_pos[1]) - float(target_pos[1])) / grid.cell_length
    steps = int(math.copysign(math.floor(abs(gap) + 0.5), gap))
    row = grid.center.row + steps
    if not 0 <= row < grid.rows:
        return None
    return GridCell(row, col)


def resolve_collisions(cells: Sequence[Optional[GridCell]], gaps: Sequence[float]) -> tuple:
    """Keep one vehicle per cell, the one with the smallest |gap|.

    Returns (kept indices in input order, number of vehicles displaced).
    Ties keep the earlier vehicle.
    """
    best: dict = {}
    collisions = 0
    for k, cell in enumerate(cells):
        if cell is None:
            continue
        if cell in best:
            collisions += 1
            if abs(gaps[k]) < abs(gaps[best[cell]]):
                best[cell] = k
        else:
            best[cell] = k
    return sorted(best.values()), collisions


def build_social_tensor(
    embeddings: Sequence[Tensor],
    cells: Sequence[Optional[GridCell]],
    grid: GridSpec = GridSpec(),
    gaps: Optional[Sequence[float]] = None,
) -> Tensor:
    """Write each embedding into its cell of a (embed, rows, cols) tensor.

    Vehicles without a cell are skipped; empty cells stay zero.
    """
    if len(embeddings) != len(cells):
        raise ValueError(f"{len(embeddings)} embeddings but {len(cells)} cells")
    if gaps is None:
        gaps = [0.0] * len(cells)
    kept, _ = resolve_collisions(cells, gaps)
    if not kept:
        raise ValueError("no vehicle has a grid cell")
    rows = stack([embeddings[k] for k in kept], axis=0)
    flat = [cells[k].row * grid.cols + cells[k].col for k in kept]
    placed = scatter_rows(rows, flat, grid.rows * grid.cols)
    return transpose(reshape(placed, (grid.rows, grid.cols, rows.shape[1])), (2, 0, 1))


def social_batch(embeddings: Tensor, slots: Sequence[int], batch: int, grid: GridSpec) -> Tensor:
    """Batched placement: row k of ``embeddings`` goes to flat slot
    ``slots[k]`` = sample * rows * cols + row * cols + col.

    Returns a (batch, embed, rows, cols) tensor.
    """
    d = embeddings.shape[1]
    placed = scatter_rows(embeddings, slots, batch * grid.rows * grid.cols)
    return transpose(reshape(placed, (batch, grid.rows, grid.cols, d)), (0, 3, 1, 2))


def social_conv(t: Tensor, weights: SocialWeights) -> Tensor:
    """conv -> ReLU -> conv -> ReLU -> maxpool -> flatten (channel-major)."""
    if t.ndim not in (3, 4):
        raise ShapeError(f"social tensor must be (embed, rows, cols) or batched, got {t.shape}")
    if t.shape[-3] != weights.conv1_k.shape[1]:
        raise ShapeError(f"social tensor has {t.shape[-3]} channels, conv expects {weights.conv1_k.shape[1]}")
    x = relu(conv2d(t, weights.conv1_k, weights.conv1_b))
    x = relu(conv2d(x, weights.conv2_k, weights.conv2_b))
    x = maxpool2d(x, weights.pool)
    if x.ndim == 3:
        return reshape(x, (int(np.prod(x.shape)),))
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
