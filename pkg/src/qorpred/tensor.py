"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation creates a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the graph in reverse topological order and
accumulates gradients into leaf tensors that have ``requires_grad`` set.

Only the operations the models need are provided. Arrays are plain numpy
``float64`` arrays; broadcasting follows numpy rules and gradients are
summed back to the operand shape.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import (
    ContractError,
    DegenerateBatchError,
    EmptySegmentError,
    IdRangeError,
    ParameterError,
    ShapeError,
)

ACTIVATIONS = ("relu", "elu", "leaky_relu", "sigmoid", "tanh", "identity")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(())
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None
        self.name = name

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
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# reverse pass

def _topo_order(root):
    order = []
    seen = set()
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


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every trainable leaf."""
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward() needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg


# --------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    xd = x.data
    return _node(np.log(xd), (x,), lambda g: (g / xd,))


def absolute(x):
    x = as_tensor(x)
    s = np.sign(x.data)
    return _node(np.abs(x.data), (x,), lambda g: (g * s,))


# --------------------------------------------------------------------------
# linear algebra and shape manipulation

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), back)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(out, dtype=np.float64), (x,), back)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), back)


def getitem(x, key):
    """Basic or fancy indexing; the gradient scatter-adds into the source."""
    x = as_tensor(x)
    shape = x.shape
    parts = key if isinstance(key, tuple) else (key,)
    fancy = any(isinstance(k, (list, np.ndarray)) for k in parts)

    def back(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, key, g)
        else:
            full[key] = g
        return (full,)

    return _node(np.array(x.data[key], dtype=np.float64), (x,), back)


def gather_rows(table, ids):
    """Rows of ``table`` selected by integer ``ids`` (any shape).

    Output shape is ``ids.shape + table.shape[1:]``.
    """
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise IdRangeError(f"ids must be integers, got dtype {ids.dtype}")
    ids = ids.astype(np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)].reshape(-1)[0]
        raise IdRangeError(f"row id {int(bad)} out of range [0, {n})")
    shape = table.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape((-1,) + shape[1:]))
        return (full,)

    return _node(table.data[ids], (table,), back)


# --------------------------------------------------------------------------
# nonlinearities

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _node(x.data * scale, (x,), lambda g: (g * scale,))


def elu(x, alpha=1.0):
    x = as_tensor(x)
    pos = x.data > 0
    em1 = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, alpha * em1)
    deriv = np.where(pos, 1.0, alpha * (em1 + 1.0))
    return _node(out, (x,), lambda g: (g * deriv,))


def sigmoid(x):
    x = as_tensor(x)
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def activation(x, kind, slope=0.2):
    if kind == "relu":
        return relu(x)
    if kind == "elu":
        return elu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "identity" or kind is None:
        return as_tensor(x)
    raise ParameterError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), back)


# --------------------------------------------------------------------------
# normalization and regularization

def _normalize_backward(g_hat, xhat, inv_std, axis):
    m1 = g_hat.mean(axis=axis, keepdims=True)
    m2 = (g_hat * xhat).mean(axis=axis, keepdims=True)
    return inv_std * (g_hat - m1 - xhat * m2)


def _affine(xhat, inv_std, axis, x, gain, bias):
    gd = gain.data if gain is not None else None
    out = xhat * gd if gain is not None else xhat
    if bias is not None:
        out = out + bias.data
    red = tuple(i for i in range(xhat.ndim) if i != xhat.ndim - 1)

    def back(g):
        g_hat = g * gd if gain is not None else g
        gx = _normalize_backward(g_hat, xhat, inv_std, axis) if x.requires_grad else None
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=red) if gain.requires_grad else None)
        if bias is not None:
            grads.append(g.sum(axis=red) if bias.requires_grad else None)
        return tuple(grads)

    parents = tuple(t for t in (x, gain, bias) if t is not None)
    return _node(out, parents, back)


def layer_norm(x, gain=None, bias=None, eps=1e-5):
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"layer_norm needs a non-empty last axis, got {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    return _affine(xhat, inv_std, -1, x, gain, bias)


class BatchNormState:
    """Affine parameters and running statistics of one batch-norm layer.

    Running statistics use the biased batch variance, so evaluating with
    statistics fitted to a batch reproduces the train-mode output on it.
    """

    def __init__(self, width, momentum=0.1, eps=1e-5):
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.bias = Tensor(np.zeros(width), requires_grad=True)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, state, mode="train"):
    """Batch normalization over rows of a ``nodes x features`` matrix."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects a 2-D input, got {x.shape}")
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError(
                f"train-mode batch norm needs at least 2 rows, got {x.shape[0]}")
        mu = x.data.mean(axis=0, keepdims=True)
        var = x.data.var(axis=0, keepdims=True)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu[0]
        state.running_var = (1.0 - m) * state.running_var + m * var[0]
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv_std
        return _affine(xhat, inv_std, 0, x, state.gain, state.bias)
    if mode != "eval":
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    xhat = (x.data - state.running_mean) * inv_std
    gain, bias = state.gain, state.bias
    out = xhat * gain.data + bias.data

    def back(g):
        return g * gain.data * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _node(out, (x, gain, bias), back)


def dropout(x, p, mode="train", rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


# --------------------------------------------------------------------------
# segment (scatter) reductions

def _check_segments(segment_ids, n_rows, n_segments):
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (n_rows,):
        raise ShapeError(f"segment ids shape {ids.shape} does not match {n_rows} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
        raise IdRangeError(f"segment ids must lie in [0, {n_segments})")
    return ids


def segment_matrix(segment_ids, n_segments):
    """Sparse ``n_segments x n`` 0/1 matrix summing rows into their segment."""
    n = len(segment_ids)
    return sp.csr_matrix((np.ones(n), (segment_ids, np.arange(n))), shape=(n_segments, n))


def segment_reduce(values, segment_ids, n_segments, kind="sum"):
    """Reduce rows of ``values`` that share a segment id.

    ``max`` routes its gradient to the first (lowest-index) arg-max row.
    """
    values = as_tensor(values)
    n = values.shape[0]
    ids = _check_segments(segment_ids, n, n_segments)
    tail = values.shape[1:]
    flat = values.data.reshape(n, -1)
    counts = np.bincount(ids, minlength=n_segments)
    if kind in ("mean", "max") and np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise EmptySegmentError(f"segment {empty} is empty under {kind!r} reduction")

    if kind in ("sum", "mean"):
        S = segment_matrix(ids, n_segments)
        out = np.asarray(S @ flat)
        if kind == "mean":
            out = out / counts[:, None]
            scale = (1.0 / counts)[ids][:, None]
        else:
            scale = None

        def back(g):
            g = g.reshape(n_segments, -1)
            gv = np.asarray(S.T @ g)
            if scale is not None:
                gv = gv * scale
            return (gv.reshape(values.shape),)

        return _node(out.reshape((n_segments,) + tail), (values,), back)

    if kind != "max":
        raise ParameterError(f"unknown segment reduction {kind!r}")
    order = np.argsort(ids, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sorted_vals = flat[order]
    out = np.maximum.reduceat(sorted_vals, starts, axis=0)
    seg_sorted = ids[order]
    pos = np.where(sorted_vals == out[seg_sorted], np.arange(n)[:, None], n)
    first = np.minimum.reduceat(pos, starts, axis=0)
    winners = order[first]  # [segment, column] -> source row
    cols = np.broadcast_to(np.arange(flat.shape[1]), winners.shape)

    def back(g):
        gv = np.zeros_like(flat)
        gv[winners, cols] = g.reshape(n_segments, -1)
        return (gv.reshape(values.shape),)

    return _node(out.reshape((n_segments,) + tail), (values,), back)


def segment_softmax(scores, segment_ids, n_segments):
    """Softmax of ``scores`` rows within each segment (independently per column)."""
    scores = as_tensor(scores)
    n = scores.shape[0]
    ids = _check_segments(segment_ids, n, n_segments)
    flat = scores.data.reshape(n, -1)
    top = np.full((n_segments, flat.shape[1]), -np.inf)
    np.maximum.at(top, ids, flat)
    e = np.exp(flat - top[ids])
    S = segment_matrix(ids, n_segments)
    totals = np.asarray(S @ e)
    out = e / totals[ids]

    def back(g):
        g = g.reshape(n, -1)
        inner = np.asarray(S @ (g * out))
        return ((out * (g - inner[ids])).reshape(scores.shape),)

    return _node(out.reshape(scores.shape), (scores,), back)


def scatter_edges(values, src, dst, n_out, weights=None):
    """``out[dst[e]] += w[e] * values[src[e]]`` over all edges ``e``.

    ``weights`` may be None (all ones), a constant array, or a Tensor, in
    which case it receives a gradient too.
    """
    values = as_tensor(values)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape:
        raise ShapeError(f"src {src.shape} and dst {dst.shape} differ")
    w_tensor = weights if isinstance(weights, Tensor) else None
    if weights is None:
        w = np.ones(len(src))
    else:
        w = (weights.data if w_tensor is not None else np.asarray(weights, dtype=np.float64))
    if w.shape != src.shape:
        raise ShapeError(f"edge weights {w.shape} do not match {src.shape} edges")
    n_in = values.shape[0]
    M = sp.csr_matrix((w, (dst, src)), shape=(n_out, n_in))
    vd = values.data
    flat = vd.reshape(n_in, -1)
    out = np.asarray(M @ flat).reshape((n_out,) + vd.shape[1:])

    def back(g):
        g2 = g.reshape(n_out, -1)
        gv = np.asarray(M.T @ g2).reshape(vd.shape) if values.requires_grad else None
        if w_tensor is None:
            return (gv,)
        gw = (g2[dst] * flat[src]).sum(axis=1) if w_tensor.requires_grad else None
        return gv, gw

    parents = (values,) if w_tensor is None else (values, w_tensor)
    return _node(out, parents, back)
