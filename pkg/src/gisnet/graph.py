"""Scene graphs, symmetric normalisation and the two-layer graph convolution."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .autodiff import ShapeError, Tensor, matmul, relu, take_rows


@dataclass(frozen=True)
class SceneGraph:
    n: int
    target: int
    edges: frozenset = field(default_factory=frozenset)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


@dataclass(frozen=True)
class NormalizedAdjacency:
    n: int
    matrix: np.ndarray


@dataclass(frozen=True)
class BatchedGraph:
    members: tuple
    matrix: np.ndarray
    offsets: tuple

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def sizes(self) -> tuple:
        return tuple(m.n for m in self.members)


def build_star_adjacency(n: int, target: int) -> SceneGraph:
    """Target connected to every other vehicle; neighbours are not linked."""
    if n < 1:
        raise ValueError(f"graph needs at least one vertex, got n={n}")
    if not 0 <= target < n:
        raise ValueError(f"target {target} out of range for n={n}")
    edges = frozenset((min(target, j), max(target, j)) for j in range(n) if j != target)
    return SceneGraph(n, target, edges)


def normalize_adjacency(g: SceneGraph) -> NormalizedAdjacency:
    a_hat = g.adjacency() + np.eye(g.n)
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    s = inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]
    # exact symmetry, independent of rounding in the products above
    s = np.triu(s) + np.triu(s, 1).T
    return NormalizedAdjacency(g.n, s)


def block_diagonal_batch(graphs: Sequence[NormalizedAdjacency]) -> BatchedGraph:
    graphs = tuple(graphs)
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    sizes = [g.n for g in graphs]
    offsets = tuple(int(o) for o in np.cumsum([0] + sizes[:-1]))
    fused = np.zeros((sum(sizes), sum(sizes)))
    for g, o in zip(graphs, offsets):
        fused[o : o + g.n, o : o + g.n] = g.matrix
    return BatchedGraph(graphs, fused, offsets)


def gcn_forward(
    x: Tensor,
    s: Union[NormalizedAdjacency, BatchedGraph, np.ndarray],
    w0: Tensor,
    w1: Tensor,
) -> Tensor:
    """S . ReLU(S . X . W0) . W1, with no activation after the second layer."""
    mat = s if isinstance(s, np.ndarray) else s.matrix
    if x.ndim != 2 or mat.shape != (x.shape[0], x.shape[0]):
        raise ShapeError(f"gcn_forward: features {x.shape} vs adjacency {mat.shape}")
    st = Tensor(mat)
    hidden = relu(matmul(st, matmul(x, w0)))
    return matmul(st, matmul(hidden, w1))


def target_rows(batched: BatchedGraph, targets: Sequence[int]) -> np.ndarray:
    if len(targets) != len(batched.members):
        raise ValueError(f"{len(targets)} target indices for {len(batched.members)} graphs")
    rows = []
    for k, (t, g, o) in enumerate(zip(targets, batched.members, batched.offsets)):
        if not 0 <= t < g.n:
            raise ValueError(f"target {t} outside graph {k} of size {g.n}")
        rows.append(o + t)
    return np.array(rows, dtype=np.int64)


def extract_target_feature(h: Tensor, batched: BatchedGraph, targets: Sequence[int]) -> Tensor:
    """Rows of the GCN output that belong to each member graph's target."""
    return take_rows(h, target_rows(batched, targets))
