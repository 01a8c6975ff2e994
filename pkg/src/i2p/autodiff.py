"""Dense float64 tensors with reverse-mode automatic differentiation.

A dynamic tape: each op builds a node holding its parents and a closure that
maps the output gradient to parent gradients. ``backward`` walks the graph
once in reverse topological order. Everything is 64-bit and deterministic;
identical inputs give bit-identical outputs.

Broadcasting is supported only where the network needs it (bias rows,
shared mask token); batched matmul requires identical leading extents.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, NumericsError, ShapeError

_node_counter = itertools.count()

# Graph construction can be switched off for pure inference (probing,
# finite-difference evaluations); ops then skip parents and closures.
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the with-block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float64 array participating in the computation graph.

    Attributes:
        data: row-major float64 ndarray.
        grad: accumulated gradient, allocated lazily by ``backward``.
        requires_grad: whether gradients flow into this node.
        node_id: creation-ordered identity within the graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_counter)
        self.op = op
        self._parents = parents
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Operators used by the network code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(a, b=None):
    """Whether a new node should join the graph, and its parent tuple."""
    if not _grad_enabled:
        return False, ()
    if b is None:
        return (a.requires_grad, (a,)) if a.requires_grad else (False, ())
    rg = a.requires_grad or b.requires_grad
    return (rg, (a, b)) if rg else (False, ())


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    rg, parents = _track(a, b)
    out = Tensor(a.data + b.data, rg, "add", parents)
    if rg:
        ash, bsh = a.data.shape, b.data.shape

        def bwd(g):
            ga = _unbroadcast(g, ash) if a.requires_grad else None
            gb = _unbroadcast(g, bsh) if b.requires_grad else None
            return ga, gb

        out._bwd = bwd
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    rg, parents = _track(a, b)
    out = Tensor(a.data - b.data, rg, "sub", parents)
    if rg:
        ash, bsh = a.data.shape, b.data.shape

        def bwd(g):
            ga = _unbroadcast(g, ash) if a.requires_grad else None
            gb = _unbroadcast(-g, bsh) if b.requires_grad else None
            return ga, gb

        out._bwd = bwd
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    rg, parents = _track(a, b)
    out = Tensor(a.data * b.data, rg, "mul", parents)
    if rg:
        ad, bd = a.data, b.data

        def bwd(g):
            ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
            gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
            return ga, gb

        out._bwd = bwd
    return out


def scale(a: Tensor, s: float) -> Tensor:
    rg, parents = _track(a)
    out = Tensor(a.data * s, rg, "scale", parents)
    if rg:
        out._bwd = lambda g: (g * s,)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; 2-d, or stacked 3-d with identical leading extents."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.ndim != bd.ndim:
        raise ShapeError(f"matmul expects equal-rank 2-d/3-d operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2] or ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    rg, parents = _track(a, b)
    out = Tensor(ad @ bd, rg, "matmul", parents)
    if rg:

        def bwd(g):
            ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
            gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
            return ga, gb

        out._bwd = bwd
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused affine map ``x @ w + b`` for 2-d ``x``."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 2 or xd.shape[1] != wd.shape[0] or wd.shape[1] != bd.shape[0]:
        raise ShapeError(f"linear shape mismatch: {xd.shape} @ {wd.shape} + {bd.shape}")
    rg = _grad_enabled and (x.requires_grad or w.requires_grad or b.requires_grad)
    out = Tensor(xd @ wd + bd, rg, "linear", (x, w, b) if rg else ())
    if rg:

        def bwd(g):
            gx = g @ wd.T if x.requires_grad else None
            gw = xd.T @ g if w.requires_grad else None
            gb = g.sum(axis=0) if b.requires_grad else None
            return gx, gw, gb

        out._bwd = bwd
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    rg = _grad_enabled and any(t.requires_grad for t in tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), rg,
                 "concat", tuple(tensors) if rg else ())
    if rg:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            pieces = np.split(g, splits, axis=axis)
            return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

        out._bwd = bwd
    return out


def gather(x: Tensor, idx) -> Tensor:
    """Select rows of ``x`` along axis 0 by integer index."""
    idx = np.asarray(idx, dtype=np.intp)
    rg, parents = _track(x)
    out = Tensor(x.data[idx], rg, "gather", parents)
    if rg:
        xshape = x.data.shape

        def bwd(g):
            gx = np.zeros(xshape)
            np.add.at(gx, idx, g)
            return (gx,)

        out._bwd = bwd
    return out


def reshape(x: Tensor, shape) -> Tensor:
    rg, parents = _track(x)
    out = Tensor(x.data.reshape(shape), rg, "reshape", parents)
    if rg:
        old = x.data.shape
        out._bwd = lambda g: (g.reshape(old),)
    return out


def transpose(x: Tensor, axes=None) -> Tensor:
    rg, parents = _track(x)
    out = Tensor(np.transpose(x.data, axes), rg, "transpose", parents)
    if rg:
        inv = None if axes is None else np.argsort(axes)
        out._bwd = lambda g: (np.transpose(g, inv),)
    return out


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Replicate a 1×C row tensor into an n×C tensor."""
    if x.data.ndim != 2 or x.data.shape[0] != 1:
        raise ShapeError(f"broadcast_rows expects a 1×C tensor, got {x.data.shape}")
    rg, parents = _track(x)
    out = Tensor(np.broadcast_to(x.data, (n, x.data.shape[1])).copy(), rg,
                 "broadcast_rows", parents)
    if rg:
        out._bwd = lambda g: (g.sum(axis=0, keepdims=True),)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    rg, parents = _track(x)
    out = Tensor(x.data.sum(), rg, "sum", parents)
    if rg:
        shape = x.data.shape
        out._bwd = lambda g: (np.full(shape, float(g)),)
    return out


def mean(x: Tensor) -> Tensor:
    rg, parents = _track(x)
    out = Tensor(x.data.mean(), rg, "mean", parents)
    if rg:
        shape, n = x.data.shape, x.data.size
        out._bwd = lambda g: (np.full(shape, float(g) / n),)
    return out


def amax(x: Tensor, axis: int) -> Tensor:
    """Maximum along one axis; gradient flows to the first argmax."""
    rg, parents = _track(x)
    out = Tensor(x.data.max(axis=axis), rg, "amax", parents)
    if rg:
        idx = np.expand_dims(x.data.argmax(axis=axis), axis)
        shape = x.data.shape

        def bwd(g):
            gx = np.zeros(shape)
            np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
            return (gx,)

        out._bwd = bwd
    return out


# ---------------------------------------------------------------------------
# nonlinearities / normalization
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax; slices along ``axis`` sum to 1."""
    xd = x.data
    if np.isnan(xd).any():
        raise NumericsError("softmax received NaN input")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    rg, parents = _track(x)
    out = Tensor(y, rg, "softmax", parents)
    if rg:

        def bwd(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        out._bwd = bwd
    return out


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (pre-affine)."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (xd - mu) * inv
    rg, parents = _track(x)
    out = Tensor(y, rg, "layer_norm", parents)
    if rg:

        def bwd(g):
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            return (inv * (g - gm - y * gym),)

        out._bwd = bwd
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU in the tanh approximation."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)
    rg, parents = _track(x)
    out = Tensor(y, rg, "gelu", parents)
    if rg:

        def bwd(g):
            dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

        out._bwd = bwd
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse-topological node list; visits each node exactly once."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, param_sink: dict | None = None) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss.

    Repeated calls accumulate. When ``param_sink`` is given, gradients of
    leaf tensors (parameters) are added into ``param_sink[node_id]`` instead
    of their ``grad`` attribute, so several graphs sharing parameters can be
    differentiated concurrently and reduced in a caller-chosen order.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._bwd is None:
            # leaf
            if param_sink is not None:
                acc = param_sink.get(node.node_id)
                param_sink[node.node_id] = g.copy() if acc is None else acc + g
            else:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        # closures never mutate gradient buffers, so aliasing is safe here
        node.grad = g if node.grad is None else node.grad + g
        for parent, pg in zip(node._parents, node._bwd(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent.node_id)
            grads[parent.node_id] = pg if acc is None else acc + pg


def first_nonfinite(loss: Tensor) -> Tensor | None:
    """Earliest-created graph node holding a NaN/Inf value, if any."""
    bad = [n for n in _topo_order(loss) if not np.isfinite(n.data).all()]
    if not bad:
        return None
    return min(bad, key=lambda n: n.node_id)
