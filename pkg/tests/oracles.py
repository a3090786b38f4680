"""Independent reference implementations used as test oracles.

Written with explicit loops and plain numpy, without importing the code under test.
"""
import itertools
import math

import numpy as np


def dense_normalized(n, edges):
    """S[i][j] = Ahat[i][j] / sqrt(deg_i * deg_j), degrees counted by loop."""
    ahat = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    for i, j in edges:
        ahat[i][j] = ahat[j][i] = 1.0
    deg = [sum(row) for row in ahat]
    return np.array([[ahat[i][j] / math.sqrt(deg[i] * deg[j]) for j in range(n)] for i in range(n)])


def gcn_chain(x, s, w0, w1):
    """S . ReLU(S . X . W0) . W1 by nested loops over the matrix chain."""
    def mm(a, b):
        out = np.zeros((a.shape[0], b.shape[1]))
        for i in range(a.shape[0]):
            for j in range(b.shape[1]):
                out[i, j] = sum(a[i, k] * b[k, j] for k in range(a.shape[1]))
        return out

    hidden = mm(s, mm(x, w0))
    hidden = np.where(hidden > 0, hidden, 0.0)
    return mm(s, mm(hidden, w1))


def star_edges(n, center):
    return {(min(center, j), max(center, j)) for j in range(n) if j != center}


def random_edges(rng, n, p=0.4):
    return {(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < p}


def power_iteration_radius(m, iters=200, seed=0):
    v = np.random.default_rng(seed).normal(size=m.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        lam = norm / np.linalg.norm(v)
        v = w / norm
    return lam


def lstm_cell(x, h, c, wx, wh, b):
    d = h.shape[-1]
    z = x @ wx + h @ wh + b
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    i, f, g, o = sig(z[:d]), sig(z[d : 2 * d]), np.tanh(z[2 * d : 3 * d]), sig(z[3 * d :])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def rmse_loops(pred, truth, frames):
    out = []
    for f in frames:
        acc = 0.0
        for m in range(len(pred)):
            acc += (pred[m][f][0] - truth[m][f][0]) ** 2 + (pred[m][f][1] - truth[m][f][1]) ** 2
        out.append(math.sqrt(acc / len(pred)))
    return out
