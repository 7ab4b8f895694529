"""Reverse-mode autodiff on numpy arrays.

A ``Tape`` records every op executed while it is the innermost active
tape, in execution order.  Since ops only consume already-built tensors,
execution order is a topological order of the graph, and walking the
record backwards propagates gradients correctly.  A tape is single-use:
``backward`` consumes it and a second call raises.

Tensors hold float64 data.  ``requires_grad`` propagates through every
op; leaves you want gradients for are created with ``param``.  Gradients
accumulate into ``.grad`` and are allocated lazily, so untouched
branches stay cheap.

Setting LPNET_DEBUG=1 makes every op assert its output is finite, which
turns a NaN that would surface thirty ops later into an error at the op
that produced it.
"""

import os
import threading

import numpy as np

_tape_stack = threading.local()


def _stack():
    if not hasattr(_tape_stack, "stack"):
        _tape_stack.stack = []
    return _tape_stack.stack


def _current_tape():
    s = _stack()
    return s[-1] if s else None


def _debug():
    return os.environ.get("LPNET_DEBUG", "") not in ("", "0")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def detach(self):
        """Same data, cut from the graph: gradients stop here."""
        return Tensor(self.data, requires_grad=False)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, astensor(other))

    def __radd__(self, other):
        return add(astensor(other), self)

    def __sub__(self, other):
        return sub(self, astensor(other))

    def __rsub__(self, other):
        return sub(astensor(other), self)

    def __mul__(self, other):
        return mul(self, astensor(other))

    def __rmul__(self, other):
        return mul(astensor(other), self)

    def __truediv__(self, other):
        return div(self, astensor(other))

    def __rtruediv__(self, other):
        return div(astensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, astensor(other))

    def __getitem__(self, idx):
        return getitem(self, idx)


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data):
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


class Tape:
    """Gradient tape; use as a context manager around the forward pass."""

    def __init__(self):
        self._nodes = []
        self._used = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Seed d(loss)=1 and push gradients back through the record."""
        if self._used:
            raise RuntimeError("tape already consumed by a previous backward")
        self._used = True
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        debug = _debug()
        for out, parents, backward_fn in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue
            pgrads = backward_fn(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if debug and not np.all(np.isfinite(pg)):
                    raise FloatingPointError("non-finite gradient in backward pass")
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += pg
        self._nodes.clear()


def _make(out_data, parents, backward_fn):
    """Build the output tensor and record the node on the active tape."""
    if _debug() and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite value in forward pass")
    req = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=req)
    tape = _current_tape()
    if req and tape is not None:
        tape._nodes.append((out, parents, backward_fn))
    return out


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = astensor(a), astensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = astensor(a), astensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = astensor(a), astensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = astensor(a), astensor(b)

    def bw(g):
        da = _unbroadcast(g / b.data, a.shape)
        db = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return da, db

    return _make(a.data / b.data, (a, b), bw)


def neg(a):
    a = astensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    ad, bd = a.data, b.data
    inner = bd.shape[0] if bd.ndim == 1 else bd.shape[-2]
    if ad.shape[-1] != inner:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        raise ValueError(f"matmul backward unsupported for {ad.shape} @ {bd.shape}")

    return _make(out, (a, b), bw)


# ------------------------------------------------------------- shape/moving

def transpose(a, axes=None):
    a = astensor(a)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), bw)


def reshape(a, shape):
    a = astensor(a)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), bw)


def broadcast_to(a, shape):
    a = astensor(a)

    def bw(g):
        return (_unbroadcast(g, a.shape),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bw)


def concat(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def _index_has_arrays(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(a, idx):
    a = astensor(a)
    shape = a.shape
    fancy = _index_has_arrays(idx)

    def bw(g):
        dz = np.zeros(shape)
        if fancy:
            np.add.at(dz, idx, g)
        else:
            dz[idx] += g
        return (dz,)

    out = a.data[idx]
    if isinstance(out, np.ndarray):
        out = out.copy()
    return _make(out, (a,), bw)


def take(a, indices):
    """Gather rows along axis 0; duplicate indices accumulate in backward."""
    a = astensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    shape = a.shape

    def bw(g):
        dz = np.zeros(shape)
        np.add.at(dz, indices, g)
        return (dz,)

    return _make(a.data[indices], (a,), bw)


# --------------------------------------------------------------- reductions

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = astensor(a)
    shape = a.shape

    def bw(g):
        return (_expand_reduced(g, shape, axis, keepdims).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = astensor(a)
    shape = a.shape
    count = a.data.size if axis is None else np.prod(
        [shape[ax % len(shape)] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bw(g):
        return (_expand_reduced(g, shape, axis, keepdims) / count,)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)


# ------------------------------------------------------------ nonlinearities

def relu(a):
    a = astensor(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), bw)


def sigmoid(a):
    a = astensor(a)
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), bw)


def tanh(a):
    a = astensor(a)
    t = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - t * t),)

    return _make(t, (a,), bw)


def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``.  ``mask`` is an additive ndarray of the same
    broadcastable shape (e.g. -1e9 at padded positions), applied before
    normalization and excluded from the gradient."""
    a = astensor(a)
    z = a.data if mask is None else a.data + mask
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (a,), bw)


def log_softmax(a, axis=-1):
    a = astensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw)


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data
    reduce_axes = tuple(range(x.data.ndim - 1))

    def bw(g):
        dgamma = _unbroadcast((g * xhat).sum(axis=reduce_axes), gamma.shape)
        dbeta = _unbroadcast(g.sum(axis=reduce_axes), beta.shape)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), bw)


def dropout(x, rate, rng, train=True):
    """Inverted dropout: scales kept units by 1/(1-rate) so eval is identity."""
    x = astensor(x)
    if not train or rate <= 0.0:
        return x
    if rate >= 1.0:
        keep = np.zeros(x.shape)
    else:
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bw(g):
        return (g * keep,)

    return _make(x.data * keep, (x,), bw)


# --------------------------------------------------------- selection/combine

def maximum(a, b):
    a, b = astensor(a), astensor(b)
    cond = a.data >= b.data

    def bw(g):
        return _unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)

    return _make(np.where(cond, a.data, b.data), (a, b), bw)


def minimum(a, b):
    a, b = astensor(a), astensor(b)
    cond = a.data <= b.data

    def bw(g):
        return _unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)

    return _make(np.where(cond, a.data, b.data), (a, b), bw)


def where_mask(cond, a, b):
    """Elementwise select by a boolean ndarray; grads route to the taken side."""
    cond = np.asarray(cond, dtype=bool)
    a, b = astensor(a), astensor(b)

    def bw(g):
        return _unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)

    return _make(np.where(cond, a.data, b.data), (a, b), bw)


def weighted_sum(weights, items):
    """Pool rows of ``items`` (M, d) with ``weights`` (M,) into a (d,) vector."""
    weights, items = astensor(weights), astensor(items)
    w, it = weights.data, items.data

    def bw(g):
        return it @ g, np.outer(w, g)

    return _make(w @ it, (weights, items), bw)
