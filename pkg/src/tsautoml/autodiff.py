"""Small reverse-mode automatic differentiation engine over numpy arrays.

Operations performed on :class:`Tensor` objects are recorded on the active
:class:`Tape` whenever one of the inputs requires a gradient. Calling
:func:`backward` walks the tape in reverse insertion order and accumulates
adjoints.

    >>> with Tape() as tape:
    ...     x = Tensor(3.0, requires_grad=True)
    ...     loss = x * x
    >>> float(backward(loss, tape)[x.id].data)
    6.0

Everything is float64.
"""
from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "backward", "grad_check", "as_tensor", "custom",
    "add", "sub", "mul", "div", "neg", "matmul", "concat", "stack", "sum",
    "mean", "tanh", "sigmoid", "exp", "log", "softmax", "logsumexp", "square",
    "sqrt", "transpose", "reshape", "clip", "inv_spd", "logdet_spd",
]

_ids = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""


class Tensor:
    __slots__ = ("data", "requires_grad", "id", "grad")
    # make ndarray <op> Tensor dispatch to the Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of primitive applications.

    Used as a context manager; the innermost active tape receives records.
    """

    def __init__(self):
        self.nodes: list = []

    def record(self, out: Tensor, parents: Sequence[Tensor], backward_fn: Callable):
        self.nodes.append((out, tuple(parents), backward_fn))

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, parents, backward_fn)
    return out


def custom(data, parents: Sequence, backward_fn: Callable) -> Tensor:
    """Record a user-defined primitive.

    ``backward_fn`` maps the output adjoint to one gradient per parent (same
    order, same shapes; ``None`` allowed for parents without grad).
    """
    return _make(data, [as_tensor(p) for p in parents], backward_fn)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(name, a, b):
    if a.data.shape == b.data.shape:
        return a.data.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp values; the gradient passes only where the input was inside."""
    a = as_tensor(a)
    x = a.data
    out = np.clip(x, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return _make(out, (a,), lambda g: (g * inside,))


# ------------------------------------------------------------------ reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return div(sum(a, axis=axes, keepdims=keepdims), float(n))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), bw)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(x - m).sum(axis=axis, keepdims=True)
    out_k = np.log(s) + m
    out = np.squeeze(out_k, axis=axis)

    def bw(g):
        w = np.exp(x - out_k)
        return (np.expand_dims(g, axis) * w,)

    return _make(out, (a,), bw)


# --------------------------------------------------------------------- shapes

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    ax = axis % out.ndim
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None
    ax = axis % out.ndim
    n = len(ts)
    return _make(out, ts, lambda g: tuple(np.take(g, i, axis=ax) for i in range(n)))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data[idx]

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


# ------------------------------------------------------------- linear algebra

def _chol(x: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(x)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"matrix not positive definite: {exc}") from exc


def inv_spd(a) -> Tensor:
    """Inverse of a (batch of) symmetric positive definite matrices."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"inv_spd: expected square matrices, got {a.shape}")
    L = _chol(a.data)
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    Linv = np.linalg.solve(L, eye)
    out = np.matmul(np.swapaxes(Linv, -1, -2), Linv)

    def bw(g):
        return (-np.matmul(np.matmul(np.swapaxes(out, -1, -2), g), np.swapaxes(out, -1, -2)),)

    return _make(out, (a,), bw)


def logdet_spd(a) -> Tensor:
    """log|A| for a (batch of) symmetric positive definite matrices."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"logdet_spd: expected square matrices, got {a.shape}")
    L = _chol(a.data)
    out = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)

    def bw(g):
        eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
        Linv = np.linalg.solve(L, eye)
        ainv = np.matmul(np.swapaxes(Linv, -1, -2), Linv)
        return (np.asarray(g)[..., None, None] * ainv,)

    return _make(out, (a,), bw)


# -------------------------------------------------------------------- backward

def backward(loss: Tensor, tape: Tape) -> dict[int, Tensor]:
    """Reverse sweep from a scalar ``loss``.

    Returns a map from tensor id to gradient for every leaf on the tape that
    requires a gradient. Leaves the loss does not depend on get zeros. The
    gradients are also stored on ``.grad`` of those tensors.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    adj: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    produced = set()
    for out, parents, fn in reversed(tape.nodes):
        produced.add(out.id)
        g = adj.pop(out.id, None)
        if g is None:
            for p in parents:
                if p.requires_grad:
                    leaves.setdefault(p.id, p)
            continue
        grads = fn(g)
        for p, gp in zip(parents, grads):
            if gp is None or not p.requires_grad:
                continue
            leaves.setdefault(p.id, p)
            prev = adj.get(p.id)
            adj[p.id] = gp if prev is None else prev + gp
    if loss.requires_grad and loss.id not in produced:
        leaves[loss.id] = loss
    result = {}
    for tid, t in leaves.items():
        if tid in produced:
            continue
        g = adj.get(tid)
        g = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
        t.grad = g
        result[tid] = Tensor(g)
    return result


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backward() and central finite differences.

    ``f`` takes no arguments and builds its output from ``params`` (whose
    ``.data`` is perturbed in place during the check).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with Tape() as tape:
        out = f()
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: f is not finite")
    grads = backward(out, tape)
    worst = 0.0
    for p in params:
        analytic = grads[p.id].data if p.id in grads else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(f().data)
            flat[k] = orig - eps
            fm = float(f().data)
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("grad_check: f is not finite")
            num = (fp - fm) / (2.0 * eps)
            a = float(analytic.reshape(-1)[k])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
