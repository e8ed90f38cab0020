"""Reverse-mode automatic differentiation over numpy arrays.

Every op returns a new :class:`Tensor` holding a closure that maps the
gradient of the output to gradients of its inputs.  ``Tensor.backward``
walks the graph in reverse topological order and accumulates into the
``grad`` field of every leaf that requires a gradient.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _result(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


@contextlib.contextmanager
def frozen(params: Iterable[Tensor]):
    """Temporarily stop gradient accumulation into ``params``."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data + b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data - b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def abs_(x: Tensor) -> Tensor:
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _result(np.asarray(x.data.mean()), (x,),
                   lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return _result(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    z = x.data
    out = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    return _result(out, (x,), lambda g: (g * _stable_sigmoid(z),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)


# ---------------------------------------------------------------- image ops

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input with an (O, C, kh, kw) kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ck, kh, kw = w.shape
    if c != ck:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d kernel {w.shape} larger than padded input {x.shape} (padding={padding})")
    s = stride
    ho, wo = (hp - kh) // s + 1, (wp - kw) // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]  # N,C,Ho,Wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = gmat.sum(axis=0) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            g_on = g.transpose(1, 0, 2, 3).reshape(o, -1)
            dcols = (wmat.T @ g_on).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros((c, n, hp, wp), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j]
            gx = gxp.transpose(1, 0, 2, 3)
            if padding:
                gx = gx[:, :, padding:padding + h, padding:padding + wd]
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _result(out, parents, backward)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalisation over the spatial axes (no affine)."""
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _result(xhat, (x,), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of an NCHW tensor."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result(out, (x,), backward)


def gather_pixels(x: Tensor, n_idx, y_idx, x_idx) -> Tensor:
    """Pick pixels ``x[n, :, y, x]`` for index arrays of length M; returns (M, C)."""
    n_idx, y_idx, x_idx = (np.asarray(a, dtype=np.intp) for a in (n_idx, y_idx, x_idx))
    out = x.data[n_idx, :, y_idx, x_idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (n_idx, slice(None), y_idx, x_idx), g)
        return (gx,)

    return _result(out, (x,), backward)


def index_frames(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Select samples along the batch axis (with repeats allowed)."""
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), backward)
