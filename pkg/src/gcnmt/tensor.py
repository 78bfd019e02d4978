"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in row-major numpy arrays. Every operation on tensors that
require gradients records its inputs and an adjoint rule; ``backward``
replays those rules in reverse topological order and accumulates
gradients additively. One compute graph is single-threaded; separate
graphs are independent.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "tsum",
    "tmean",
    "concat",
    "stack0",
    "gather_rows",
    "scatter_add_rows",
    "slice_rows",
    "reshape",
    "transpose",
    "backward",
    "zero_grads",
    "grad_check",
    "GradCheckEntry",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add shapes {a.shape} and {b.shape} do not broadcast") from e

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub shapes {a.shape} and {b.shape} do not broadcast") from e

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul shapes {a.shape} and {b.shape} do not broadcast") from e

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul needs >=1-d operands, got {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} are incompatible") from e

    def bwd(g):
        A, B = a.data, b.data
        A1 = A if A.ndim > 1 else A[None, :]
        B1 = B if B.ndim > 1 else B[:, None]
        lead = np.broadcast_shapes(A1.shape[:-2], B1.shape[:-2])
        G1 = g.reshape(lead + (A1.shape[-2], B1.shape[-1]))
        gA = np.matmul(G1, np.swapaxes(B1, -1, -2))
        gB = np.matmul(np.swapaxes(A1, -1, -2), G1)
        gA = _unbroadcast(gA, A1.shape).reshape(A.shape)
        gB = _unbroadcast(gB, B1.shape).reshape(B.shape)
        return gA, gB

    return _node(data, (a, b), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)
    return _node(data, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))
    return _node(data, (a,), lambda g: (g * data * (1.0 - data),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)
    return _node(data, (a,), lambda g: (g * (1.0 - data * data),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)
    return _node(data, (a,), lambda g: (g * data,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)
    return _node(data, (a,), lambda g: (g / a.data,))


def softmax(a, mask=None, axis: int = -1) -> Tensor:
    """Exp-normalize along ``axis``; ``mask`` (True = keep) zeroes entries exactly."""
    a = _as_tensor(a)
    z = a.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not m.any(axis=axis).all():
            raise ValueError("softmax: at least one unmasked position required")
        z = np.where(m, z, -np.inf)
    with np.errstate(invalid="ignore"):
        z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), bwd)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lsm = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bwd(g):
        return (g - np.exp(lsm) * g.sum(axis=axis, keepdims=True),)

    return _node(lsm, (a,), bwd)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _node(data, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bwd(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(data, tuple(ts), bwd)


def stack0(tensors) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    ts = [reshape(_as_tensor(t), (1,) + _as_tensor(t).shape) for t in tensors]
    return concat(ts, axis=0)


def gather_rows(a, idx) -> Tensor:
    """Index the leading axis with an integer array of any shape."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(data, (a,), bwd)


def scatter_add_rows(a, idx, num_rows: int) -> Tensor:
    """Sum rows of ``a`` into ``num_rows`` output rows given by ``idx``."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = np.zeros((num_rows,) + a.shape[1:])
    np.add.at(out, idx, a.data)
    return _node(out, (a,), lambda g: (g[idx],))


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    data = a.data[start:stop].copy()

    def bwd(g):
        out = np.zeros_like(a.data)
        out[start:stop] = g
        return (out,)

    return _node(data, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)
    return _node(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)
    return _node(data, (a,), lambda g: (np.transpose(g, inv),))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    seen = set()
    topo = []
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(p)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grads(params) -> None:
    """Clear accumulated gradients; the training loop calls this between steps."""
    values = params.values() if hasattr(params, "values") else params
    for p in values:
        p.grad = None


@dataclass
class GradCheckEntry:
    max_rel_err: float
    n_flagged: int

    @property
    def ok(self) -> bool:
        return self.n_flagged == 0


def grad_check(f, params: dict, epsilon: float = 1e-4, tolerance: float = 1e-4):
    """Compare backward gradients of ``f(params)`` against central differences.

    Returns ``{name: GradCheckEntry}`` where a coordinate is flagged when
    |analytic - numeric| / max(1, |numeric|) exceeds ``tolerance``. ``f``
    must be deterministic (fix any dropout masks and RNG up front).
    """
    zero_grads(params)
    loss = f(params)
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    report = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.ravel()
            ana = analytic[name].ravel()
            max_err = 0.0
            flagged = 0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                lp = f(params).item()
                flat[i] = orig - epsilon
                lm = f(params).item()
                flat[i] = orig
                numeric = (lp - lm) / (2.0 * epsilon)
                if not (np.isfinite(numeric) and np.isfinite(ana[i])):
                    raise ValueError(f"grad_check: non-finite value at {name}[{i}]")
                err = abs(ana[i] - numeric) / max(1.0, abs(numeric))
                max_err = max(max_err, err)
                if err > tolerance:
                    flagged += 1
            report[name] = GradCheckEntry(max_rel_err=max_err, n_flagged=flagged)
    return report


def save_checkpoint(path, params: dict) -> None:
    """Write a flat archive of parameter paths to little-endian float64 arrays.

    The container is numpy's ``.npz`` format: a zip archive holding one
    ``.npy`` member per parameter path.
    """
    arrays = {}
    for name, p in params.items():
        data = p.data if isinstance(p, Tensor) else np.asarray(p)
        arrays[name] = np.asarray(data, dtype="<f8")
    np.savez(path, **arrays)


def load_checkpoint(path) -> dict:
    with np.load(path) as z:
        return {name: z[name].astype(np.float64) for name in z.files}
