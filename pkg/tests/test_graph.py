import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gisnet.autodiff import ShapeError, Tensor
from gisnet.graph import (
    SceneGraph,
    block_diagonal_batch,
    build_star_adjacency,
    extract_target_feature,
    gcn_forward,
    normalize_adjacency,
)
from oracles import dense_normalized, gcn_chain, power_iteration_radius, random_edges, star_edges


def test_star_edges():
    assert build_star_adjacency(1, 0).edges == frozenset()
    assert build_star_adjacency(3, 0).edges == {(0, 1), (0, 2)}
    g = build_star_adjacency(5, 2)
    assert len(g.edges) == 4 and all(2 in e for e in g.edges)


@pytest.mark.parametrize("n,target", [(0, 0), (3, 3), (3, -1)])
def test_star_rejects_bad_arguments(n, target):
    with pytest.raises(ValueError):
        build_star_adjacency(n, target)


def test_normalized_small_cases():
    np.testing.assert_array_equal(normalize_adjacency(build_star_adjacency(1, 0)).matrix, [[1.0]])
    np.testing.assert_allclose(normalize_adjacency(build_star_adjacency(2, 0)).matrix, [[0.5, 0.5], [0.5, 0.5]])
    s = normalize_adjacency(build_star_adjacency(3, 0)).matrix
    r6 = 1 / math.sqrt(6)
    np.testing.assert_allclose(s, [[1 / 3, r6, r6], [r6, 0.5, 0.0], [r6, 0.0, 0.5]], atol=1e-15)
    np.testing.assert_allclose(s, dense_normalized(3, star_edges(3, 0)), atol=1e-15)


@pytest.mark.parametrize("n", range(1, 21))
def test_symmetry_diagonal_and_spectrum(n):
    rng = np.random.default_rng(n)
    for g in (build_star_adjacency(n, n // 2), SceneGraph(n, 0, frozenset(random_edges(rng, n)))):
        s = normalize_adjacency(g).matrix
        assert np.array_equal(s, s.T)
        assert np.all(s >= 0)
        deg = g.adjacency().sum(1) + 1
        np.testing.assert_allclose(np.diag(s), 1 / deg, rtol=1e-15)
        assert power_iteration_radius(s) <= 1 + 1e-9


@pytest.mark.parametrize("n", range(1, 8))
def test_star_row_sums_match_brute_force(n):
    s = normalize_adjacency(build_star_adjacency(n, 0)).matrix
    ref = dense_normalized(n, star_edges(n, 0)).sum(1)
    np.testing.assert_allclose(s.sum(1), ref, atol=1e-14)
    assert np.all(ref > 0) and np.all(ref <= math.sqrt(n) + 1e-12)


def test_block_diagonal_cases():
    one = normalize_adjacency(build_star_adjacency(3, 1))
    np.testing.assert_array_equal(block_diagonal_batch([one]).matrix, one.matrix)
    lone = normalize_adjacency(build_star_adjacency(1, 0))
    np.testing.assert_array_equal(block_diagonal_batch([lone, lone]).matrix, np.eye(2))
    with pytest.raises(ValueError):
        block_diagonal_batch([])


def test_block_diagonal_structure():
    members = [normalize_adjacency(build_star_adjacency(n, 0)) for n in (3, 2, 4)]
    b = block_diagonal_batch(members)
    assert b.matrix.shape == (9, 9) and b.offsets == (0, 3, 5)
    owner = np.repeat([0, 1, 2], [3, 2, 4])
    for i in range(9):
        for j in range(9):
            if owner[i] != owner[j]:
                assert b.matrix[i, j] == 0.0
            else:
                k = owner[i]
                o = b.offsets[k]
                assert b.matrix[i, j] == members[k].matrix[i - o, j - o]


def test_gcn_zero_input_single_vertex():
    rng = np.random.default_rng(0)
    s = normalize_adjacency(build_star_adjacency(1, 0))
    out = gcn_forward(Tensor(np.zeros((1, 4))), s, Tensor(rng.normal(size=(4, 6))), Tensor(rng.normal(size=(6, 6))))
    np.testing.assert_array_equal(out.values, np.zeros((1, 6)))


def test_gcn_identity_adjacency_reduces_to_relu():
    k, d = 5, 64
    lone = normalize_adjacency(build_star_adjacency(1, 0))
    b = block_diagonal_batch([lone] * k)
    x = np.random.default_rng(1).normal(size=(k, d))
    out = gcn_forward(Tensor(x), b, Tensor(np.eye(d)), Tensor(np.eye(d)))
    np.testing.assert_array_equal(out.values, np.maximum(x, 0))


def test_gcn_matches_chain_oracle_on_star():
    rng = np.random.default_rng(2)
    x, w0, w1 = rng.normal(size=(3, 5)), rng.normal(size=(5, 4)), rng.normal(size=(4, 4))
    s = normalize_adjacency(build_star_adjacency(3, 0))
    out = gcn_forward(Tensor(x), s, Tensor(w0), Tensor(w1)).values
    np.testing.assert_allclose(out, gcn_chain(x, dense_normalized(3, star_edges(3, 0)), w0, w1), atol=1e-10)


def test_gcn_shape_mismatch():
    s = normalize_adjacency(build_star_adjacency(3, 0))
    with pytest.raises(ShapeError):
        gcn_forward(Tensor(np.ones((4, 2))), s, Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))


def test_extract_target_rows():
    sizes = (2, 3)
    b = block_diagonal_batch([normalize_adjacency(build_star_adjacency(n, 0)) for n in sizes])
    h = Tensor(np.arange(5.0)[:, None] * np.ones((1, 3)))
    out = extract_target_feature(h, b, [0, 1]).values
    np.testing.assert_array_equal(out[:, 0], [0.0, 3.0])
    lone = block_diagonal_batch([normalize_adjacency(build_star_adjacency(1, 0))])
    np.testing.assert_array_equal(extract_target_feature(Tensor([[7.0, 8.0]]), lone, [0]).values, [[7.0, 8.0]])
    with pytest.raises(ValueError):
        extract_target_feature(h, b, [2, 0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=5), st.integers(0, 10_000))
def test_batching_equivalence(sizes, seed):
    rng = np.random.default_rng(seed)
    graphs = [normalize_adjacency(SceneGraph(n, 0, frozenset(random_edges(rng, n)))) for n in sizes]
    xs = [rng.normal(size=(n, 4)) for n in sizes]
    w0, w1 = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(3, 3)))
    batched = gcn_forward(Tensor(np.vstack(xs)), block_diagonal_batch(graphs), w0, w1).values
    single = np.vstack([gcn_forward(Tensor(x), g, w0, w1).values for x, g in zip(xs, graphs)])
    np.testing.assert_allclose(batched, single, rtol=0, atol=1e-12)
    targets = [int(rng.integers(n)) for n in sizes]
    picked = extract_target_feature(Tensor(batched), block_diagonal_batch(graphs), targets).values
    np.testing.assert_allclose(picked, np.vstack([single[sum(sizes[:k]) + t] for k, t in enumerate(targets)]), atol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    a = SceneGraph(n, 0, frozenset(random_edges(rng, n)))
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    # vertex perm[i] of the original becomes vertex i
    permuted = SceneGraph(n, int(inv[0]), frozenset((min(inv[i], inv[j]), max(inv[i], inv[j])) for i, j in a.edges))
    x = rng.normal(size=(n, 4))
    w0, w1 = Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(5, 5)))
    out = gcn_forward(Tensor(x), normalize_adjacency(a), w0, w1).values
    out_p = gcn_forward(Tensor(x[perm]), normalize_adjacency(permuted), w0, w1).values
    np.testing.assert_allclose(out_p, out[perm], rtol=0, atol=1e-12)
