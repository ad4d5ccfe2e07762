"""A small reverse-mode differentiation engine over float64 numpy arrays.

Every op builds a new :class:`Tensor` that remembers its inputs and a closure
mapping the output gradient to input gradients.  :func:`backward` walks the
graph in reverse topological order and accumulates into ``.grad`` of every
tensor created with ``requires_grad=True``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch, ZeroVector

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], Sequence[Array | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> Array:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Array, b: Array, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid(-x),))


def _sigmoid(x: Array) -> Array:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# -- linear algebra and shape ops ----------------------------------------------

def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D ``b``; ``a`` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose expects a matrix")
    return _make(a.data.T, (a,), lambda g: (g.T,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a: Tensor, axis: int = -1, mask: Array | None = None) -> Tensor:
    """log Σ exp over ``axis``; entries where ``mask`` is False are excluded."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * e / s,))


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ZeroVector("cannot normalize a zero vector")
    u = x / norm

    def backward(g):
        return ((g - u * np.sum(g * u, axis=axis, keepdims=True)) / norm,)

    return _make(u, (a,), backward)


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cosine_similarity: {a.shape} vs {b.shape}")
    return sum(mul(l2_normalize(a, axis), l2_normalize(b, axis)), axis=axis)


# -- fused bidirectional-encoder building block -------------------------------

def gru_sequence(x: Tensor, mask: Array, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Run a gated recurrent cell over a padded batch and return final states.

    ``x`` is (B, T, D), ``mask`` (B, T) marks real steps, ``w`` (D, 3H),
    ``u`` (H, 3H), ``b`` (3H,) with gate blocks ordered [update, reset,
    candidate].  Per step::

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        c = tanh(x W_c + (r * h) U_c + b_c)
        h = (1 - z) * h + z * c

    Padded steps leave ``h`` unchanged.  The initial state is zero.
    """
    x, w, u, b = as_tensor(x), as_tensor(w), as_tensor(u), as_tensor(b)
    B, T, D = x.shape
    H = u.shape[0]
    if w.shape != (D, 3 * H) or u.shape != (H, 3 * H) or b.shape != (3 * H,) or mask.shape != (B, T):
        raise ShapeMismatch(
            f"gru_sequence: x{x.shape} mask{mask.shape} w{w.shape} u{u.shape} b{b.shape}")
    m = mask.astype(np.float64)[:, :, None]
    xw = x.data @ w.data + b.data  # (B, T, 3H)
    U = u.data
    hs = np.zeros((T + 1, B, H))
    zs = np.empty((T, B, H))
    rs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    for t in range(T):
        h = hs[t]
        gx = xw[:, t]
        hu = h @ U[:, : 2 * H]
        z = _sigmoid(gx[:, :H] + hu[:, :H])
        r = _sigmoid(gx[:, H : 2 * H] + hu[:, H:])
        c = np.tanh(gx[:, 2 * H :] + (r * h) @ U[:, 2 * H :])
        mt = m[:, t]
        hs[t + 1] = h + mt * z * (c - h)
        zs[t], rs[t], cs[t] = z, r, c

    def backward(g):
        dxw = np.zeros((B, T, 3 * H))
        dU = np.zeros_like(U)
        dh = g.copy()
        for t in range(T - 1, -1, -1):
            h, z, r, c, mt = hs[t], zs[t], rs[t], cs[t], m[:, t]
            dz = dh * mt * (c - h)
            dc = dh * mt * z
            dh_prev = dh * (1.0 - mt * z)
            da_c = dc * (1.0 - c * c)
            rh = r * h
            dU[:, 2 * H :] += rh.T @ da_c
            drh = da_c @ U[:, 2 * H :].T
            dr = drh * h
            dh_prev += drh * r
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            da_zr = np.concatenate([da_z, da_r], axis=1)
            dU[:, : 2 * H] += h.T @ da_zr
            dh_prev += da_zr @ U[:, : 2 * H].T
            dxw[:, t, : 2 * H] = da_zr
            dxw[:, t, 2 * H :] = da_c
            dh = dh_prev
        flat = dxw.reshape(-1, 3 * H)
        dx = dxw @ w.data.T
        dw = x.data.reshape(-1, D).T @ flat
        db = flat.sum(axis=0)
        return dx, dw, dU, db

    return _make(hs[T].copy(), (x, w, u, b), backward)


# -- reverse pass --------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: float = 1.0) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, Array] = {id(loss): np.full(loss.shape, grad, dtype=np.float64)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not (parent.requires_grad or parent._backward is not None):
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params) -> None:
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None
