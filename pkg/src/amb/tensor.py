"""Minimal n-d array with reverse-mode automatic differentiation.

Every operation that has at least one input with ``requires_grad`` set records
itself by giving its output a parent list, a backward rule and a monotonically
increasing ``node_id``. Creation order is therefore a topological order, and
:func:`backward` replays the reachable part of it in reverse.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import erf

_node_counter = itertools.count()

_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class GradientContractError(RuntimeError):
    """backward() was called on something that is not a scalar on the tape."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)


def _record(data, parents, rule):
    out = Tensor.__new__(Tensor)
    out.data = data if isinstance(data, np.ndarray) else np.asarray(data)
    out.grad = None
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = rule
            out.node_id = next(_node_counter)
            return out
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out.node_id = None
    return out


def _const_like(value, ref):
    return np.asarray(value, dtype=ref.dtype)


def zeros(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype))


# ---------------------------------------------------------------- elementwise

def add(a, b):
    """Elementwise sum. ``b`` may also be a vector added along the last axis of ``a``."""
    if a.shape == b.shape:
        return _record(a.data + b.data, (a, b), lambda g, need: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]
        return _record(a.data + b.data, (a, b),
                       lambda g, need: (g, g.reshape(-1, n).sum(axis=0) if need[1] else None))
    raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")
    return _record(a.data - b.data, (a, b), lambda g, need: (g, -g))


def mul(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g, need: (g * bd if need[0] else None,
                                                    g * ad if need[1] else None))


def scale(a, c):
    c = _const_like(c, a.data)
    return _record(a.data * c, (a,), lambda g, need: (g * c,))


def relu(x):
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0).astype(x.dtype), (x,),
                   lambda g, need: (np.where(pos, g, 0).astype(g.dtype),))


def gelu(x):
    """Exact (erf based) GELU as used by BERT."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT_HALF))
    out = (xd * cdf).astype(x.dtype)

    def rule(g, need):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(g.dtype),)

    return _record(out, (x,), rule)


def absolute(x):
    sign = np.sign(x.data)
    return _record(np.abs(x.data), (x,), lambda g, need: (g * sign,))


# ----------------------------------------------------------------- reductions

def sum_all(x):
    shape = x.shape
    return _record(x.data.sum(dtype=x.dtype), (x,),
                   lambda g, need: (np.broadcast_to(g, shape).astype(g.dtype),))


def mean_all(x):
    n = x.data.size
    inv = _const_like(1.0 / n, x.data)
    shape = x.shape
    return _record(x.data.mean(dtype=x.dtype), (x,),
                   lambda g, need: (np.full(shape, g * inv, dtype=x.dtype),))


# ------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product.

    Supported forms: ``[..., m, k] @ [k, n]`` (shared right operand) and
    ``[B, m, k] @ [B, k, n]`` with identical leading extents.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        k, n = bd.shape

        def rule(g, need):
            da = g @ bd.T if need[0] else None
            db = ad.reshape(-1, k).T @ g.reshape(-1, n) if need[1] else None
            return da, db

        return _record(ad @ bd, (a, b), rule)
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} @ {b.shape}")

    def rule(g, need):
        da = g @ np.swapaxes(bd, -1, -2) if need[0] else None
        db = np.swapaxes(ad, -1, -2) @ g if need[1] else None
        return da, db

    return _record(ad @ bd, (a, b), rule)


def linear(x, w, b=None):
    """``x @ w (+ b)`` as one recorded operation; ``x`` is [..., k], ``w`` is [k, n]."""
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear bias {b.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    k, n = wd.shape
    out = xd @ wd
    if b is not None:
        out += b.data

    def rule(g, need):
        dx = g @ wd.T if need[0] else None
        dw = xd.reshape(-1, k).T @ g.reshape(-1, n) if need[1] else None
        if len(need) == 2:
            return dx, dw
        return dx, dw, (g.reshape(-1, n).sum(axis=0) if need[2] else None)

    return _record(out, (x, w) if b is None else (x, w, b), rule)


def attention_core(q, k, v, heads, valid=None):
    """Multi-head scaled dot-product attention on [T, d] projections.

    Splits ``d`` into ``heads`` slices, masks invalid keys with -inf, and returns
    the merged [T, d] context as a single recorded operation.
    """
    seq, d = q.shape
    if k.shape != (seq, d) or v.shape != (seq, d) or d % heads:
        raise DimensionError(f"attention shapes {q.shape}, {k.shape}, {v.shape} with {heads} heads")
    dh = d // heads
    scale_ = np.asarray(1.0 / np.sqrt(dh), dtype=q.dtype)
    split = lambda a: a.reshape(seq, heads, dh).transpose(1, 0, 2)  # noqa: E731
    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    weights = attention_weights(qh, kh, scale_, valid)
    ctx = (weights @ vh).transpose(1, 0, 2).reshape(seq, d)

    def rule(g, need):
        gh = split(g)
        dw = gh @ vh.transpose(0, 2, 1)
        dv = weights.transpose(0, 2, 1) @ gh
        ds = weights * (dw - (dw * weights).sum(axis=-1, keepdims=True)) * scale_
        dq = ds @ kh
        dk = ds.transpose(0, 2, 1) @ qh
        merge = lambda a: a.transpose(1, 0, 2).reshape(seq, d)  # noqa: E731
        return merge(dq), merge(dk), merge(dv)

    return _record(ctx, (q, k, v), rule)


def attention_weights(qh, kh, scale_, valid=None):
    """Softmax attention weights [H, T, T] for head-split arrays."""
    scores = (qh @ kh.transpose(0, 2, 1)) * scale_
    if valid is not None and not valid.all():
        scores = np.where(valid[None, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------- shape moves

def reshape(x, shape):
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g, need: (g.reshape(old),))


def transpose(x, axes):
    inverse = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,),
                   lambda g, need: (np.transpose(g, inverse),))


def take(x, index):
    """Basic/advanced indexing; backward scatters into a zero buffer."""
    shape = x.shape

    def rule(g, need):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _record(np.array(x.data[index]), (x,), rule)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    ax = axis % tensors[0].ndim
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def rule(g, need):
        return tuple(np.split(g, splits, axis=ax))

    return _record(np.concatenate([t.data for t in tensors], axis=ax), tensors, rule)


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for table of {vocab} rows: {ids.tolist()}")
    return take(table, ids)


# ------------------------------------------------------------ normalisations

def masked_fill(x, fill_mask, value):
    """Set positions where ``fill_mask`` is true to a constant (no gradient there)."""
    fill_mask = np.asarray(fill_mask, dtype=bool)
    keep = ~fill_mask
    return _record(np.where(fill_mask, _const_like(value, x.data), x.data), (x,),
                   lambda g, need: (np.where(keep, g, 0).astype(g.dtype),))


def softmax_lastdim(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def rule(g, need):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), rule)


def layer_norm(x, gain, bias, eps=1e-12):
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm params {gain.shape}/{bias.shape} do not match {x.shape}")
    xd = x.data
    inv_d = _const_like(1.0 / d, xd)
    mu = xd.sum(axis=-1, keepdims=True) * inv_d
    centred = xd - mu
    var = (centred * centred).sum(axis=-1, keepdims=True) * inv_d
    inv_std = 1.0 / np.sqrt(var + _const_like(eps, xd))
    xhat = centred * inv_std
    gd = gain.data

    def rule(g, need):
        dx = dgain = dbias = None
        if need[0]:
            dxhat = g * gd
            dx = inv_std * (dxhat - dxhat.sum(axis=-1, keepdims=True) * inv_d
                            - xhat * ((dxhat * xhat).sum(axis=-1, keepdims=True) * inv_d))
        if need[1]:
            dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        if need[2]:
            dbias = g.reshape(-1, d).sum(axis=0)
        return dx, dgain, dbias

    return _record(xhat * gd + bias.data, (x, gain, bias), rule)


def dropout(x, p, training, rng):
    """Inverted dropout; identity outside training or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    factor = np.where(keep, 1.0 / (1.0 - p), 0.0).astype(x.dtype)
    return _record(x.data * factor, (x,), lambda g, need: (g * factor,))


# ----------------------------------------------------------------- backward

def build_tape(loss):
    """Recorded operations reachable from ``loss``, in creation (topological) order."""
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or t.node_id is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t.node_id)
    return nodes


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable trainable leaf."""
    if loss.data.size != 1:
        raise GradientContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientContractError("loss is not connected to any tensor that requires grad")
    if loss.node_id is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(build_tape(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        need = tuple(p.requires_grad for p in node._parents)
        for parent, pg in zip(node._parents, node._backward(g, need)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id is not None:
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
            elif parent.grad is None:
                parent.grad = np.array(pg, dtype=parent.dtype, copy=True).reshape(parent.shape)
            else:
                parent.grad += pg.reshape(parent.shape)
