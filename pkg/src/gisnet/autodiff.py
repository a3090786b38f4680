"""Dense double-precision tensors with a reverse-mode gradient tape.

Every operation checks shapes strictly; there is no implicit broadcasting.
The only broadcasts are explicit (``bias_add`` and ``scale``).

Typical use::

    with Tape() as tape:
        w = tape.watch(np.ones((3, 2)))
        loss = sum_all(matmul(x, w))
    grads = backward(tape, loss)
    grads[w]
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_active = threading.local()


def _current_tape() -> Optional["Tape"]:
    return getattr(_active, "tape", None)


class Tensor:
    """Immutable dense array, optionally attached to a tape node."""

    __slots__ = ("_values", "node", "tape")

    def __init__(self, values, node: Optional[int] = None, tape: Optional["Tape"] = None):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        arr.setflags(write=False)
        self._values = arr
        self.node = node
        self.tape = tape

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> tuple:
        return self._values.shape

    @property
    def ndim(self) -> int:
        return self._values.ndim

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def item(self) -> float:
        return float(self._values.reshape(-1)[0]) if self._values.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self._values.copy()

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; all strict-shape
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    inputs: tuple
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered log of operations; ``backward`` replays it in reverse."""

    records: list = field(default_factory=list)
    shapes: dict = field(default_factory=dict)
    _next: int = 0
    _previous: object = None

    def __enter__(self) -> "Tape":
        self._previous = _current_tape()
        _active.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _active.tape = self._previous

    def _new_node(self, shape: tuple) -> int:
        node = self._next
        self._next += 1
        self.shapes[node] = shape
        return node

    def watch(self, values) -> Tensor:
        """Register a leaf tensor whose gradient should be computed."""
        arr = values.values if isinstance(values, Tensor) else values
        t = Tensor(arr)
        t.node = self._new_node(t.shape)
        t.tape = self
        return t

    def __len__(self) -> int:
        return len(self.records)


def _emit(out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``out`` and record the op if any input is tracked."""
    tapes = {id(t.tape): t.tape for t in inputs if t.tracked}
    if not tapes:
        return Tensor(out)
    if len(tapes) > 1:
        raise RuntimeError("operands belong to different tapes")
    tape = next(iter(tapes.values()))
    result = Tensor(out)
    result.node = tape._new_node(result.shape)
    result.tape = tape
    tape.records.append(
        _Record(tuple(t.node if t.tracked else None for t in inputs), result.node, backward_fn)
    )
    return result


class GradientMap(dict):
    """Node id -> gradient array; also indexable by tracked Tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            if not key.tracked:
                raise KeyError("tensor is not on the tape")
            if key.node not in self:
                return np.zeros(key.shape)
            key = key.node
        return dict.__getitem__(self, key)


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """Reverse sweep from a scalar loss; fan-out gradients add up."""
    if loss.values.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.tracked or loss.tape is not tape:
        raise ValueError("loss is not recorded on this tape")
    grads = GradientMap()
    grads[loss.node] = np.ones(loss.shape)
    for rec in reversed(tape.records):
        g = grads.get(rec.output)
        if g is None:
            continue
        parts = rec.backward(g)
        for node, part in zip(rec.inputs, parts):
            if node is None or part is None:
                continue
            if node in grads:
                grads[node] = grads[node] + part
            else:
                grads[node] = part
    return grads


def _require_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "add")
    return _emit(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "sub")
    return _emit(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "mul")
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit(a.values * factor, (a,), lambda g: (g * factor,))


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """x[..., d] + bias[d], broadcasting over the leading axes of x."""
    if bias.ndim != 1 or x.shape[-1:] != bias.shape:
        raise ShapeError(f"bias_add: bias {bias.shape} does not match trailing dim of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _emit(x.values + bias.values, (x, bias), lambda g: (g, g.sum(axis=lead)))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return _emit(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.values)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def square(x: Tensor) -> Tensor:
    v = x.values
    return _emit(v * v, (x,), lambda g: (2.0 * g * v,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.values)
    return _emit(y, (x,), lambda g: (g * 0.5 / y,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------- reductions

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.array(x.values.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.values.size
    return _emit(np.array(x.values.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    shape = x.shape
    return _emit(
        x.values.sum(axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
    )


def cumsum(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim

    def back(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _emit(np.cumsum(x.values, axis=axis), (x,), back)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product (r x k) @ (k x c)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias for x of shape (batch, d_in) or (d_in,)."""
    if x.ndim == 1:
        return reshape(dense(reshape(x, (1, x.shape[0])), weight, bias), (weight.shape[1],))
    return bias_add(matmul(x, weight), bias)


# ---------------------------------------------------------------- structure

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.values.size:
        raise ShapeError(f"reshape: {x.shape} -> {shape} changes element count")
    old = x.shape
    return _emit(x.values.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(x.values, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join tensors of equal rank along ``axis`` (the last axis by default)."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat: empty list of parts")
    rank = parts[0].ndim
    axis = axis % rank if rank else 0
    for p in parts:
        if p.ndim != rank or p.ndim == 0:
            raise ShapeError(f"concat: mixed ranks {[q.shape for q in parts]}")
        other = [s for i, s in enumerate(p.shape) if i != axis]
        if other != [s for i, s in enumerate(parts[0].shape) if i != axis]:
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _emit(np.concatenate([p.values for p in parts], axis=axis), parts, back)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("stack: empty list of parts")
    for p in parts:
        _require_same(parts[0], p, "stack")
    axis = axis % (parts[0].ndim + 1)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _emit(np.stack([p.values for p in parts], axis=axis), parts, back)


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows (first axis) of x."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if index.size and (index.min() < -n or index.max() >= n):
        raise IndexError(f"take_rows: index out of range for {n} rows")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _emit(x.values[index], (x,), back)


def scatter_rows(x: Tensor, index, n_rows: int) -> Tensor:
    """Place row k of x at output row index[k] of an otherwise zero tensor.

    Indices must be distinct; later writes do not accumulate.
    """
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (x.shape[0],):
        raise ShapeError(f"scatter_rows: {index.shape[0]} indices for {x.shape[0]} rows")
    if len(np.unique(index)) != len(index):
        raise ValueError("scatter_rows: duplicate destination rows")
    out = np.zeros((n_rows,) + x.shape[1:])
    out[index] = x.values
    return _emit(out, (x,), lambda g: (g[index],))


# ---------------------------------------------------------------- convolution / pooling

def conv2d(inp: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid, stride-1 cross-correlation.

    ``inp`` is C_in x H x W, or batched B x C_in x H x W; ``kernels`` is
    C_out x C_in x kh x kw.
    """
    batched = inp.ndim == 4
    if inp.ndim not in (3, 4) or kernels.ndim != 4 or bias.ndim != 1:
        raise ShapeError(f"conv2d: bad ranks input {inp.shape}, kernels {kernels.shape}")
    x = inp.values if batched else inp.values[None]
    k = kernels.values
    c_out, c_in, kh, kw = k.shape
    _, c, h, w = x.shape
    if c != c_in or bias.shape != (c_out,):
        raise ShapeError(f"conv2d: input {inp.shape} incompatible with kernels {k.shape}, bias {bias.shape}")
    if kh > h or kw > w:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    # windows: B x C x H' x W' x kh x kw
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    out = np.einsum("bchwij,ocij->bohw", win, k, optimize=True) + bias.values[None, :, None, None]

    def back(g):
        gb = g if batched else g[None]
        grad_k = np.einsum("bchwij,bohw->ocij", win, gb, optimize=True)
        grad_b = gb.sum(axis=(0, 2, 3))
        padded = np.pad(gb, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gwin = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        grad_x = np.einsum("bohwij,ocij->bchw", gwin, k[:, :, ::-1, ::-1], optimize=True)
        return (grad_x if batched else grad_x[0], grad_k, grad_b)

    return _emit(out if batched else out[0], (inp, kernels, bias), back)


def maxpool2d(inp: Tensor, window: tuple) -> Tensor:
    """Non-overlapping max pooling; remainder rows/cols are dropped.

    Ties go to the first element of the window in row-major order.
    """
    ph, pw = (int(window[0]), int(window[1]))
    if ph <= 0 or pw <= 0:
        raise ValueError(f"maxpool2d: window {window} must be positive")
    batched = inp.ndim == 4
    if inp.ndim not in (3, 4):
        raise ShapeError(f"maxpool2d: expected C x H x W input, got {inp.shape}")
    x = inp.values if batched else inp.values[None]
    b, c, h, w = x.shape
    if ph > h or pw > w:
        raise ShapeError(f"maxpool2d: window {ph}x{pw} larger than input {h}x{w}")
    oh, ow = h // ph, w // pw
    blocks = x[:, :, : oh * ph, : ow * pw].reshape(b, c, oh, ph, ow, pw)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, ph * pw)
    arg = blocks.argmax(axis=-1)  # numpy argmax returns the first maximum
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = g if batched else g[None]
        gblocks = np.zeros((b, c, oh, ow, ph * pw))
        np.put_along_axis(gblocks, arg[..., None], gb[..., None], axis=-1)
        gblocks = gblocks.reshape(b, c, oh, ow, ph, pw).transpose(0, 1, 2, 4, 3, 5)
        grad = np.zeros_like(x)
        grad[:, :, : oh * ph, : ow * pw] = gblocks.reshape(b, c, oh * ph, ow * pw)
        return (grad if batched else grad[0],)

    return _emit(out if batched else out[0], (inp,), back)


# ---------------------------------------------------------------- recurrent cell

@dataclass(frozen=True)
class LSTMWeights:
    """Gate order along the 4*d_h axis: input, forget, candidate, output."""

    w_x: Tensor  # d_in x 4 d_h
    w_h: Tensor  # d_h x 4 d_h
    bias: Tensor  # 4 d_h

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]


def lstm_step(x: Tensor, state: tuple, weights: LSTMWeights) -> tuple:
    """One LSTM cell update; x is (d_in,) or (batch, d_in)."""
    h, c = state
    d_h = weights.hidden_size
    single = x.ndim == 1
    if weights.w_x.shape != (x.shape[-1], 4 * d_h) or weights.w_h.shape != (d_h, 4 * d_h):
        raise ShapeError(
            f"lstm_step: weights {weights.w_x.shape}/{weights.w_h.shape} do not fit input {x.shape}"
        )
    if weights.bias.shape != (4 * d_h,):
        raise ShapeError(f"lstm_step: bias {weights.bias.shape} != ({4 * d_h},)")
    if h.shape != c.shape or h.shape[-1] != d_h or h.ndim != x.ndim or h.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"lstm_step: state {h.shape}/{c.shape} does not fit input {x.shape}, d_h={d_h}")

    xv = x.values[None] if single else x.values
    hv = h.values[None] if single else h.values
    cv = c.values[None] if single else c.values
    wx, wh, bv = weights.w_x.values, weights.w_h.values, weights.bias.values
    z = xv @ wx + hv @ wh + bv
    i = _sigmoid(z[:, :d_h])
    f = _sigmoid(z[:, d_h : 2 * d_h])
    g = np.tanh(z[:, 2 * d_h : 3 * d_h])
    o = _sigmoid(z[:, 3 * d_h :])
    c_new = f * cv + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    # the cell is recorded as one fused op producing [h', c'] stacked on a new leading axis
    def back(gout):
        gh, gc = gout[0], gout[1]
        if single:
            gh, gc = gh[None], gc[None]
        gc_total = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                gc_total * g * i * (1.0 - i),
                gc_total * cv * f * (1.0 - f),
                gc_total * i * (1.0 - g * g),
                gh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        gx = dz @ wx.T
        gh_prev = dz @ wh.T
        gc_prev = gc_total * f
        if single:
            gx, gh_prev, gc_prev = gx[0], gh_prev[0], gc_prev[0]
        return (gx, gh_prev, gc_prev, xv.T @ dz, hv.T @ dz, dz.sum(axis=0))

    both = np.stack([h_new[0], c_new[0]]) if single else np.stack([h_new, c_new])
    joint = _emit(both, (x, h, c, weights.w_x, weights.w_h, weights.bias), back)
    return _split_pair(joint)


def _split_pair(joint: Tensor) -> tuple:
    shape = joint.shape

    def pick(k):
        def back(g):
            out = np.zeros(shape)
            out[k] = g
            return (out,)

        return _emit(joint.values[k], (joint,), back)

    return pick(0), pick(1)


# ---------------------------------------------------------------- regularisation

def dropout(x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    return _emit(x.values * factor, (x,), lambda g: (g * factor,))


@dataclass
class BatchNormState:
    """Running statistics; updated in place during train-mode calls."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, dim: int) -> "BatchNormState":
        return cls(np.zeros(dim), np.ones(dim))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Per-feature normalisation of a (batch, d) tensor."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    eps = state.eps
    if not train:
        inv = 1.0 / np.sqrt(state.var + eps)
        xhat = _emit((x.values - state.mean) * inv, (x,), lambda g: (g * inv,))
        return bias_add(mul(xhat, _row_broadcast(gamma, x.shape[0])), beta)
    n = x.shape[0]
    if n < 2:
        raise ValueError("batchnorm needs a batch of at least 2 in train mode")
    mu = x.values.mean(axis=0)
    var = x.values.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_v = (x.values - mu) * inv
    # running variance uses the unbiased estimate, as is conventional
    state.mean = (1 - state.momentum) * state.mean + state.momentum * mu
    state.var = (1 - state.momentum) * state.var + state.momentum * var * n / (n - 1)

    def back(g):
        return (inv / n * (n * g - g.sum(axis=0) - xhat_v * (g * xhat_v).sum(axis=0)),)

    xhat = _emit(xhat_v, (x,), back)
    return bias_add(mul(xhat, _row_broadcast(gamma, n)), beta)


def _row_broadcast(v: Tensor, rows: int) -> Tensor:
    return _emit(np.broadcast_to(v.values, (rows,) + v.shape).copy(), (v,), lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------- checking

def finite_difference_check(
    f: Callable[[Tensor], Tensor], x, step: float = 1e-5
) -> float:
    """Max relative error between tape gradient and central differences.

    ``f`` maps a tensor to a scalar tensor using the ops in this module.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    with Tape() as tape:
        xt = tape.watch(base)
        loss = f(xt)
    analytic = backward(tape, loss)[xt].reshape(-1)
    numeric = np.empty_like(analytic)
    flat = base.reshape(-1)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += step
        minus[i] -= step
        fp = f(Tensor(plus.reshape(base.shape))).item()
        fm = f(Tensor(minus.reshape(base.shape))).item()
        numeric[i] = (fp - fm) / (2 * step)
    return relative_error(analytic, numeric)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def constant(values) -> Tensor:
    return Tensor(values)


def zeros(shape: Iterable[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)))
