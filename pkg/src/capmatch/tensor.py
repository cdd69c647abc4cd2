"""Dense numerical kernels with a reverse-mode gradient tape.

Everything is built on numpy arrays wrapped in :class:`Tensor`. Operations
execute eagerly; when a :class:`GradTape` is active and an input is tracked,
the operation additionally records a node with its vector-Jacobian product.
Nodes are appended in creation order, which is already a valid topological
order, so the backward pass is a single reversed sweep.

Training runs in float32. A float64 mode exists purely so gradient checks
can use tight tolerances: build the inputs with ``dtype=np.float64`` and the
whole graph stays in float64.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DetachedLoss, DimensionMismatch, DoubleBackward, ZeroNormRow

DEFAULT_DTYPE = np.float32

_LN_EPS = 1e-5          # inside the sqrt of layer_norm
_NORM_EPS = 1e-12       # zero-norm guard of l2_normalize
_GELU_C = math.sqrt(2.0 / math.pi)

_TAPE_STACK: list["GradTape"] = []


class Tensor:
    """Immutable-by-convention dense array with optional gradient tracking.

    ``requires_grad=True`` marks a leaf parameter; tensors produced by ops
    never set it themselves, they carry a graph node instead.
    """

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", param" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Convenience operators; all defer to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, dtype=None) -> Tensor:
    """Wrap data as a constant (non-trainable) tensor."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def param(data, dtype=None) -> Tensor:
    """Wrap data as a trainable leaf parameter."""
    return Tensor(data, requires_grad=True, dtype=dtype)


class _Node:
    __slots__ = ("out", "parents", "vjp", "tape")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], vjp: Callable,
                 tape: "GradTape"):
        self.out = out
        self.parents = parents
        self.vjp = vjp
        self.tape = tape


class GradTape:
    """Single-owner record of operations for one backward pass.

    Use as a context manager around the forward computation, then call
    :func:`backward` (or :meth:`gradients`) exactly once.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False
        self.param_grads: dict[Tensor, np.ndarray] = {}

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)

    def gradients(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(loss, self)


def _active_tape() -> GradTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _tracked(t: Tensor, tape: GradTape) -> bool:
    return t.requires_grad or (t.node is not None and t.node.tape is tape)


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Create the output tensor, recording a node when gradients can flow."""
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.node = None
    if _TAPE_STACK:
        tape = _TAPE_STACK[-1]
        if any(_tracked(p, tape) for p in parents):
            node = _Node(out, parents, vjp, tape)
            out.node = node
            tape._nodes.append(node)
    return out


def backward(loss: Tensor, tape: GradTape) -> dict[Tensor, np.ndarray]:
    """Reverse sweep: gradient of a scalar loss w.r.t. every leaf parameter.

    Returns a map keyed by parameter tensor identity. Parameters the tape
    never saw are simply absent (their gradient is exactly zero).
    """
    if tape._consumed:
        raise DoubleBackward("backward() already ran on this tape")
    if loss.node is None or loss.node.tape is not tape:
        raise DetachedLoss("loss was not recorded on this tape")
    if loss.data.size != 1:
        raise DimensionMismatch(f"loss must be scalar, got shape {loss.shape}")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    param_grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if p.node is not None and p.node.tape is tape:
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            elif p.requires_grad:
                if p in param_grads:
                    param_grads[p] = param_grads[p] + pg
                else:
                    param_grads[p] = pg
    tape.param_grads = param_grads
    return param_grads


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _make(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * a.data.dtype.type(s)

    def vjp(g):
        return (g * a.data.dtype.type(s),)

    return _make(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _make(out, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """GELU activation, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * d.astype(x.dtype),)

    return _make(out.astype(x.dtype, copy=False), (a,), vjp)


# --- shape manipulation ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionMismatch("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionMismatch(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _make(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    out = a.data.T

    def vjp(g):
        return (g.T,)

    return _make(out, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(old),)

    return _make(out, (a,), vjp)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def vjp(g):
        pieces = []
        start = 0
        for s in sizes:
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + s)
            pieces.append(g[tuple(idx)])
            start += s
        return tuple(pieces)

    return _make(out, tuple(ts), vjp)


def concat_rows(ts: Sequence[Tensor]) -> Tensor:
    return concat(ts, axis=0)


def concat_cols(ts: Sequence[Tensor]) -> Tensor:
    return concat(ts, axis=1)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[start:stop]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _make(out, (a,), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[:, start:stop]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _make(out, (a,), vjp)


def take_diag(a: Tensor) -> Tensor:
    """Diagonal of a square matrix as a column vector (B, 1)."""
    n, m = a.data.shape
    if n != m:
        raise DimensionMismatch("take_diag expects a square matrix")
    out = np.diag(a.data).reshape(n, 1).copy()

    def vjp(g):
        full = np.zeros((n, n), dtype=g.dtype)
        np.fill_diagonal(full, g.reshape(-1))
        return (full,)

    return _make(out, (a,), vjp)


# --- reductions --------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).astype(g.dtype),)

    return _make(out, (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean(), dtype=a.data.dtype)
    shape = a.data.shape

    def vjp(g):
        return ((np.broadcast_to(g, shape) / n).astype(g.dtype),)

    return _make(out, (a,), vjp)


def sum_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(g.dtype),)

    return _make(out, (a,), vjp)


def mean_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    n = a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=a.data.dtype)
    shape = a.data.shape

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((np.broadcast_to(gg, shape) / n).astype(g.dtype),)

    return _make(out, (a,), vjp)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (N, D) -> (1, D)."""
    return mean_axis(a, axis=0, keepdims=True)


def max_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    """Max along an axis; the gradient routes to the first argmax (ties broken
    by lowest index, deterministically)."""
    out = a.data.max(axis=axis, keepdims=keepdims)
    arg = np.argmax(a.data, axis=axis)
    shape = a.data.shape

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, np.expand_dims(arg, axis), gg, axis=axis)
        return (full,)

    return _make(out, (a,), vjp)


# --- normalized kernels -------------------------------------------------------

def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out.astype(x.dtype, copy=False), (a,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row standardization followed by an affine map.

    Variance uses 1/D; epsilon 1e-5 sits inside the square root.
    """
    xd = x.data
    d = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True, dtype=xd.dtype)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True, dtype=xd.dtype)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(_LN_EPS))
    y = xc * inv
    out = y * gain.data + bias.data

    def vjp(g):
        dy = g * gain.data
        m1 = dy.mean(axis=-1, keepdims=True)
        m2 = (dy * y).mean(axis=-1, keepdims=True)
        dx = inv * (dy - m1 - y * m2)
        dgain = _unbroadcast(g * y, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        return dx.astype(xd.dtype), dgain, dbias

    return _make(out.astype(xd.dtype, copy=False), (x, gain, bias), vjp)


def l2_normalize(x: Tensor, eps: float = _NORM_EPS) -> Tensor:
    """Scale every row to unit Euclidean norm.

    Raises ZeroNormRow when a row's norm is at or below ``eps``.
    """
    xd = x.data
    sq = (xd * xd).sum(axis=-1, keepdims=True)
    norms = np.sqrt(sq)
    if np.any(norms <= eps):
        bad = int(np.argmax(norms.reshape(-1) <= eps))
        raise ZeroNormRow(f"row {bad} has norm {float(norms.reshape(-1)[bad]):.3e}")
    y = xd / norms

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / norms,)

    return _make(y.astype(xd.dtype, copy=False), (x,), vjp)


def stack_rows(ts: Sequence[Tensor]) -> Tensor:
    """Stack (1, D) or (D,) tensors into an (N, D) matrix."""
    rows = [reshape(t, (1, t.data.size)) if t.data.ndim == 1 else t for t in ts]
    return concat(rows, axis=0)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Scalar dot product of two same-shape tensors."""
    return sum_all(mul(a, b))


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity between two vectors (normalizes internally)."""
    an = l2_normalize(reshape(a, (1, a.data.size)))
    bn = l2_normalize(reshape(b, (1, b.data.size)))
    return dot(an, bn)


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def assert_all_finite(x: np.ndarray, what: str = "tensor") -> None:
    from .errors import NonFiniteValue
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue(f"{what} contains NaN or Inf")
