"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable primitive is a module-level function that computes its
forward value with numpy and attaches a closure mapping the output gradient
to one gradient per input. ``Tensor.backward`` walks the recorded graph in
reverse topological order and accumulates gradients into leaf tensors.

Storage is float32 by default; ops preserve whatever float dtype their inputs
carry, so the same model code runs in float64 for gradient checking.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

from ..errors import ContractError, DimensionError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation-mode forward passes)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _node(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- conveniences -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # -- autodiff -----------------------------------------------------------
    def backward(self):
        """Backpropagate from this scalar into every leaf with requires_grad."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root):
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


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    arr = np.asarray(x)
    if arr.dtype.kind != "f" or dtype is not None:
        arr = arr.astype(dtype or np.float32)
    return Tensor(arr)


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    if not isinstance(b, Tensor):
        b = _lift(b, a)
    return a, b


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._node(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_check("subtract", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._node(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "subtract")


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_check("elementwise-multiply", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._node(ad * bd, (a, b), backward, "elementwise-multiply")


def scale(a, c: float):
    c = float(c)
    return Tensor._node(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), "scale")


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError("matmul", a.shape, b.shape, detail="scalars not allowed")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", a.shape, b.shape, detail="batch dims") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._node(ad @ bd, (a, b), backward, "matmul")


# -- shape manipulation ---------------------------------------------------------

def reshape(a, shape):
    shape = tuple(shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", src, shape) from None
    return Tensor._node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError("transpose", a.shape, detail=f"axes {axes}")
    inv = tuple(np.argsort(axes))
    return Tensor._node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def getitem(a, idx):
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.intp)
    src, dtype = a.shape, a.dtype
    basic = _is_basic(idx)
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise DimensionError("index", src, detail=str(exc)) from None

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._node(np.array(out, copy=basic) if basic else out, (a,), backward, "index")


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty list")
    nd = tensors[0].ndim
    ax = axis if axis >= 0 else nd + axis
    for t in tensors:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError("concat", *[t.shape for t in tensors], detail=f"axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return Tensor._node(np.concatenate([t.data for t in tensors], axis=ax),
                        tensors, backward, "concat")


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError("stack", *[t.shape for t in tensors])
    n = len(tensors)

    def backward(g):
        return tuple(np.squeeze(p, axis=axis) for p in np.split(g, n, axis=axis))

    return Tensor._node(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def split(a, sizes, axis=-1):
    """Split along ``axis`` into consecutive chunks of the given sizes."""
    ax = axis if axis >= 0 else a.ndim + axis
    if sum(sizes) != a.shape[ax]:
        raise DimensionError("split", a.shape, detail=f"sizes {sizes}")
    out, start = [], 0
    for s in sizes:
        sl = [slice(None)] * a.ndim
        sl[ax] = slice(start, start + s)
        out.append(getitem(a, tuple(sl)))
        start += s
    return out


def embedding(table, ids):
    """Row lookup ``table[ids]``; gradient scatters back onto the table."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError(f"embedding-lookup needs integer ids, got {ids.dtype}")
    if table.ndim != 2:
        raise DimensionError("embedding-lookup", table.shape, ids.shape, detail="table must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding-lookup: id range [{ids.min()}, {ids.max()}] outside table of {table.shape[0]} rows")
    rows, dim = table.shape
    dtype = table.dtype

    def backward(g):
        flat = ids.reshape(-1)
        gf = g.reshape(-1, dim)
        full = np.zeros((rows, dim), dtype=dtype)
        np.add.at(full, flat, gf)
        return (full,)

    return Tensor._node(table.data[ids], (table,), backward, "embedding-lookup")


# -- nonlinearities -----------------------------------------------------------------

def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    y = _sigmoid_np(a.data)
    return Tensor._node(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def tanh(a):
    y = np.tanh(a.data)
    return Tensor._node(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def relu(a):
    x = a.data
    return Tensor._node(np.maximum(x, 0), (a,), lambda g: (g * (x > 0),), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh approximation of the gaussian error linear unit."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    t = np.tanh(c * (x + k * (x * x * x)))
    y = 0.5 * x * (1 + t)

    def backward(g):
        dt = (1 - t * t) * c * (1 + 3 * k * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * dt),)

    return Tensor._node(y, (a,), backward, "gelu")


def exp(a):
    y = np.exp(a.data)
    return Tensor._node(y, (a,), lambda g: (g * y,), "exp")


def softmax(a, axis=-1):
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._node(y, (a,), backward, "softmax")


def layer_norm(a, gain, bias, eps=1e-12):
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer-norm", a.shape, gain.shape, bias.shape)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    gd = gain.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._node(xhat * gd + bias.data, (a, gain, bias), backward, "layer-norm")


def dropout(a, p: float, rng=None):
    """Inverted dropout; identity when ``rng`` is None (evaluation mode) or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) * a.dtype.type(1.0 / (1.0 - p))
    return Tensor._node(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# -- reductions -----------------------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    src = a.shape
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([src[i] for i in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).copy(),)

    return Tensor._node(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), backward, "mean")


def max_over_time(a, axis=1, mask=None):
    """Element-wise maximum along ``axis``; ``mask`` (same shape minus the
    feature axis) excludes padded steps. Gradient goes to the first argmax."""
    x = a.data
    ax = axis if axis >= 0 else x.ndim + axis
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != x.shape[:m.ndim]:
            raise DimensionError("max-over-time", x.shape, m.shape)
        m = m.reshape(m.shape + (1,) * (x.ndim - m.ndim))
        x = np.where(m, x, -np.inf)
    idx = np.expand_dims(x.argmax(axis=ax), ax)
    out = np.take_along_axis(a.data, idx, axis=ax)
    src, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        np.put_along_axis(full, idx, np.expand_dims(g, ax), axis=ax)
        return (full,)

    return Tensor._node(np.squeeze(out, axis=ax), (a,), backward, "max-over-time")


# -- losses -----------------------------------------------------------------------------

def binary_cross_entropy(logits, targets):
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 ``targets``."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    if y.shape != z.shape:
        raise DimensionError("binary-cross-entropy", z.shape, y.shape)
    n = max(z.size, 1)
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / n
    p = _sigmoid_np(z)
    return Tensor._node(np.asarray(loss, dtype=z.dtype), (logits,),
                        lambda g: (g * (p - y) / n,), "binary-cross-entropy")


def weighted_cross_entropy(logits, labels, class_weights=None, mask=None):
    """Softmax cross-entropy over the last axis, each row scaled by the weight
    of its gold class, averaged over unmasked rows (not over weight mass)."""
    z = logits.data
    c = z.shape[-1]
    z2 = z.reshape(-1, c)
    lab = np.asarray(labels).reshape(-1)
    if lab.shape[0] != z2.shape[0]:
        raise DimensionError("weighted-cross-entropy", z.shape, np.shape(labels))
    m = np.ones(lab.shape[0], dtype=z.dtype) if mask is None else \
        np.asarray(mask, dtype=z.dtype).reshape(-1)
    if m.shape[0] != lab.shape[0]:
        raise DimensionError("weighted-cross-entropy", z.shape, np.shape(mask))
    safe = np.where(m > 0, lab, 0).astype(np.intp)
    if np.any(safe < 0) or np.any(safe >= c):
        raise ContractError("weighted-cross-entropy: label outside class range")
    w = np.ones(c, dtype=z.dtype) if class_weights is None else np.asarray(class_weights, dtype=z.dtype)
    rw = w[safe] * m
    shifted = z2 - z2.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    tot = ez.sum(axis=1, keepdims=True)
    logp = shifted - np.log(tot)
    rows = np.arange(len(safe))
    denom = m.sum()
    if denom == 0:
        return Tensor._node(np.asarray(0.0, dtype=z.dtype), (logits,),
                            lambda g: (np.zeros_like(z),), "weighted-cross-entropy")
    loss = -(rw * logp[rows, safe]).sum() / denom
    probs = ez / tot

    def backward(g):
        d = probs.copy()
        d[rows, safe] -= 1
        d *= (rw / denom)[:, None]
        return ((g * d).reshape(z.shape),)

    return Tensor._node(np.asarray(loss, dtype=z.dtype), (logits,), backward, "weighted-cross-entropy")


_OPS = {
    "matmul": matmul,
    "add": add,
    "elementwise-multiply": mul,
    "subtract": sub,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "embedding-lookup": embedding,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "gelu": gelu,
    "softmax": softmax,
    "layer-norm": layer_norm,
    "dropout": dropout,
    "max-over-time": max_over_time,
    "mean": mean,
    "binary-cross-entropy": binary_cross_entropy,
    "weighted-cross-entropy": weighted_cross_entropy,
}

OP_KINDS = tuple(_OPS)


def apply(op_kind: str, *inputs, **kwargs):
    """Dispatch a primitive by its name, e.g. ``apply("gelu", x)``."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ContractError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **kwargs)


def lstm_scan(xproj, wh, mask=None, reverse=False):
    """Run an LSTM over precomputed input projections.

    ``xproj`` is ``[B, T, 4h]`` (x @ W_x + b, gates ordered i, f, g, o) and
    ``wh`` the ``[h, 4h]`` recurrent matrix. Steps where ``mask`` is 0 carry
    the previous state through unchanged. Returns every step's hidden state,
    ``[B, T, h]``, in input order. Backward is hand-written BPTT.
    """
    if xproj.ndim != 3 or wh.ndim != 2 or xproj.shape[-1] != wh.shape[1] or wh.shape[1] != 4 * wh.shape[0]:
        raise DimensionError("lstm", xproj.shape, wh.shape)
    b, t_len, four_h = xproj.shape
    h_dim = four_h // 4
    xp, w = xproj.data, wh.data
    dtype = xp.dtype
    m = np.ones((b, t_len), dtype=dtype) if mask is None else np.asarray(mask, dtype=dtype)
    if m.shape != (b, t_len):
        raise DimensionError("lstm", xproj.shape, m.shape, detail="mask")
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)

    h = np.zeros((b, h_dim), dtype=dtype)
    c = np.zeros((b, h_dim), dtype=dtype)
    out = np.zeros((b, t_len, h_dim), dtype=dtype)
    cache = []
    for t in steps:
        a = xp[:, t] + h @ w
        i = _sigmoid_np(a[:, :h_dim])
        f = _sigmoid_np(a[:, h_dim:2 * h_dim])
        g = np.tanh(a[:, 2 * h_dim:3 * h_dim])
        o = _sigmoid_np(a[:, 3 * h_dim:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = m[:, t:t + 1]
        cache.append((t, h, c, i, f, g, o, tc, mt))
        c = mt * c_new + (1 - mt) * c
        h = mt * h_new + (1 - mt) * h
        out[:, t] = h

    def backward(gout):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        dh = np.zeros((b, h_dim), dtype=dtype)
        dc = np.zeros((b, h_dim), dtype=dtype)
        for t, h_prev, c_prev, i, f, g, o, tc, mt in reversed(cache):
            dh = dh + gout[:, t]
            dh_new = mt * dh
            dc_new = mt * dc + dh_new * o * (1 - tc * tc)
            da = np.concatenate([
                dc_new * g * i * (1 - i),
                dc_new * c_prev * f * (1 - f),
                dc_new * i * (1 - g * g),
                dh_new * tc * o * (1 - o),
            ], axis=1)
            dxp[:, t] = da
            dw += h_prev.T @ da
            dh = (1 - mt) * dh + da @ w.T
            dc = (1 - mt) * dc + dc_new * f
        return dxp, dw

    return Tensor._node(out, (xproj, wh), backward, "lstm")
