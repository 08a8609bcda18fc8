"""Dense float64 tensors with tape-based reverse-mode differentiation.

Small by design: just enough primitives to express a transformer encoder,
classification heads and their losses. Forward values are plain numpy
arrays; when a `Tape` is active, every primitive appends a node so that
`backward` can replay the recording in reverse execution order (which is
a valid reverse-topological order by construction).
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import erf

from .errors import (
    ContractError,
    GatherError,
    NumericsError,
    ShapeError,
    TapeReuseError,
)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense float64 array plus gradient bookkeeping.

    `grad` is populated (same shape as `values`) after a backward pass for
    every tensor that requires grad or sits on the path to the loss.
    """

    __slots__ = ("values", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def constant(values) -> Tensor:
    """Wrap raw data as a non-differentiable tensor."""
    return Tensor(values, requires_grad=False)


class Tape:
    """Ordered record of primitive ops; consumed by exactly one backward pass.

    A tape and its tensors belong to one thread; the active-tape stack is
    thread-local so parallel runs never share recording state.
    """

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)


_THREAD_STATE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_THREAD_STATE, "tapes", None)
    if stack is None:
        stack = _THREAD_STATE.tapes = []
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _tracked(t: Tensor, tape: Tape) -> bool:
    return t.requires_grad or t._tape is tape


def _make(values, inputs, backward_fn) -> Tensor:
    """Create the output tensor, recording the op if a tape is listening."""
    out = Tensor(values)
    tape = _active_tape()
    if tape is not None and any(_tracked(t, tape) for t in inputs):
        out._tape = tape
        tape._nodes.append((out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss."""
    if loss.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not produced under an active tape")
    if tape._consumed:
        raise TapeReuseError("tape already consumed by a previous backward pass")
    tape._consumed = True
    loss.grad = np.ones((), dtype=np.float64)
    for out, inputs, fn in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not _tracked(t, tape):
                continue
            if t.grad is None:
                t.grad = np.zeros(t.shape, dtype=np.float64)
            t.grad += gi


def zero_grads(tensors) -> None:
    """Clear gradients; accepts any iterable of tensors."""
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.values + b.values, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.values - b.values, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        )

    return _make(a.values * b.values, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _make(a.values * s, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy matmul semantics (batched dims broadcast)."""
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul needs at least 1-d operands, got {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")

    def bwd(g):
        av, bv = a.values, b.values
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ b2.swapaxes(-1, -2)
        gb = a2.swapaxes(-1, -2) @ g2
        if av.ndim == 1:
            ga = ga[..., 0, :]
        if bv.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.values @ b.values, (a, b), bwd)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _make(a.values.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.values.size
    else:
        count = a.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / count, a.shape).copy(),)

    return _make(a.values.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0.0):
        raise NumericsError("log requires strictly positive inputs")

    def bwd(g):
        return (g / a.values,)

    return _make(np.log(a.values), (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only where unclipped."""
    mask = (a.values >= lo) & (a.values <= hi)

    def bwd(g):
        return (g * mask,)

    return _make(np.clip(a.values, lo, hi), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(a.values.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inverse),)

    return _make(a.values.transpose(axes), (a,), bwd)


def select(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Pick one subtensor along an axis (the axis is dropped)."""

    def bwd(g):
        ga = np.zeros(a.shape, dtype=np.float64)
        key = [slice(None)] * a.ndim
        key[axis] = index
        ga[tuple(key)] = g
        return (ga,)

    return _make(np.take(a.values, index, axis=axis), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and layers
# ---------------------------------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Stable softmax over the trailing axis; rejects non-finite input."""
    if x.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty trailing axis")
    if not np.all(np.isfinite(x.values)):
        raise NumericsError("softmax received non-finite input")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    y = np.empty_like(v)
    pos = v >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    y[~pos] = ev / (1.0 + ev)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _make(y, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    v = x.values
    cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        return (g * (cdf + v * pdf),)

    return _make(v * cdf, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    d = v.shape[-1]

    def bwd(g):
        dxhat = g * gain.values
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        return dx, dgain, dbias

    return _make(gain.values * xhat + bias.values, (x, gain, bias), bwd)


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Look up rows of `table`; output shape is ids.shape + (width,)."""
    idx = np.asarray(ids, dtype=np.intp)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise GatherError(
            f"gather index out of range for table with {rows} rows "
            f"(got min {int(idx.min())}, max {int(idx.max())})"
        )

    def bwd(g):
        gt = np.zeros(table.shape, dtype=np.float64)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _make(table.values[idx], (table,), bwd)


def dropout(x: Tensor, rate: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout: scales survivors by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bwd(g):
        return (g * mask,)

    return _make(x.values * mask, (x,), bwd)
