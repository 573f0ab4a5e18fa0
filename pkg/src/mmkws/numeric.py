"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are only recorded while a :class:`Tape` is active and at least
one input requires a gradient, so inference runs without bookkeeping::

    with Tape() as tape:
        loss = total(...)
    grads = backward(tape, loss)
    grads[param]            # same shape as param, zeros if unused
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels

BCE_EPS = 1e-7


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    """One primitive application: inputs, output, pullback and a pure forward."""

    __slots__ = ("name", "inputs", "out", "vjp", "forward")

    def __init__(self, name, inputs, out, vjp, forward):
        self.name = name
        self.inputs = inputs
        self.out = out
        self.vjp = vjp
        self.forward = forward


_TAPES: list["Tape"] = []


class Tape:
    """Ordered computation record; nodes are appended in evaluation order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def replay(self):
        """Re-run every node from the current leaf values.

        Returns the list of recomputed outputs, in record order.
        """
        values = {}
        outs = []
        for node in self.nodes:
            args = [values.get(id(t), t.data) for t in node.inputs]
            val = node.forward(*args)
            values[id(node.out)] = val
            outs.append(val)
        return outs


def _record(name, inputs, out_data, vjp, forward):
    out = Tensor(out_data)
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1].nodes.append(Node(name, inputs, out, vjp, forward))
    return out


class Gradients:
    """Gradient table keyed by tensor identity."""

    def __init__(self, table, keep):
        self._table = table
        self._keep = keep

    def __getitem__(self, t):
        g = self._table.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def __contains__(self, t):
        return id(t) in self._table


def backward(tape: Tape, output: Tensor) -> Gradients:
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    table = {id(output): np.ones_like(output.data)}
    keep = [output]
    for node in reversed(tape.nodes):
        g = table.get(id(node.out))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in table:
                table[key] = table[key] + gi
            else:
                table[key] = gi
                keep.append(inp)
    return Gradients(table, keep)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), np.add)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), np.subtract)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    return _record("mul", (a, b), x * y,
                   lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), np.multiply)


def scale(a, c: float):
    return _record("scale", (a,), a.data * c, lambda g: (g * c,), lambda x: x * c)


def _tanh_fwd(x):
    return np.tanh(x)


def tanh(a):
    y = np.tanh(a.data)
    return _record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),), _tanh_fwd)


def _sigmoid_fwd(x):
    # exp(-|x|) never overflows and keeps full relative precision on both tails
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


# largest double below 1 and smallest normal double: saturated logits still
# map into the open unit interval
_P_HI = 1.0 - 2.0 ** -53
_P_LO = np.finfo(np.float64).tiny


def _prob_fwd(x):
    return np.clip(_sigmoid_fwd(x), _P_LO, _P_HI)


def sigmoid(x):
    """Logistic function on a float or a Tensor; results lie strictly in (0, 1)."""
    if not isinstance(x, Tensor):
        if x >= 0:
            return min(1.0 / (1.0 + math.exp(-x)), _P_HI)
        e = math.exp(max(x, -745.0))
        return max(e / (1.0 + e), _P_LO)
    y = _prob_fwd(x.data)
    return _record("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),), _prob_fwd)


def _silu_fwd(x):
    return x * _sigmoid_fwd(x)


def silu(a):
    s = _sigmoid_fwd(a.data)
    x = a.data
    return _record("silu", (a,), x * s, lambda g: (g * (s + x * s * (1.0 - s)),), _silu_fwd)


def _bce_fwd(p, y):
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))


def bce(p, label):
    """Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].

    Floats give a float; a Tensor ``p`` with a label array gives the
    elementwise loss as a Tensor.  The gradient is evaluated at the clamped
    probability, so saturated wrong predictions still get a push.
    """
    if not isinstance(p, Tensor):
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label!r}")
        pc = min(max(float(p), BCE_EPS), 1.0 - BCE_EPS)
        return -math.log(pc) if label == 1 else -math.log(1.0 - pc)
    y = np.asarray(label.data if isinstance(label, Tensor) else label, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    yt = Tensor(y)
    return _record("bce", (p, yt), _bce_fwd(p.data, y),
                   lambda g: (g * (-(y / pc) + (1.0 - y) / (1.0 - pc)), None), _bce_fwd)


# --------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data

    def vjp(g):
        gx = g @ np.swapaxes(y, -1, -2)
        if y.ndim == 2 and x.ndim > 2:
            # shared weight: fold the batch axes into one product
            gy = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gy = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return _unbroadcast(gx, x.shape), gy

    return _record("matmul", (a, b), x @ y, vjp, np.matmul)


def reshape(a, shape):
    old = a.shape
    return _record("reshape", (a,), a.data.reshape(shape),
                   lambda g: (g.reshape(old),), lambda x: x.reshape(shape))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _record("transpose", (a,), np.transpose(a.data, axes),
                   lambda g: (np.transpose(g, inv),), lambda x: np.transpose(x, axes))


def concat(parts, axis=0):
    """Concatenate along ``axis``; the pullback splits the upstream gradient."""
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _record("concat", tuple(parts), np.concatenate([p.data for p in parts], axis=axis),
                   lambda g: tuple(np.split(g, cuts, axis=axis)),
                   lambda *xs: np.concatenate(xs, axis=axis))


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", (a,), a.data.sum(axis=axis), vjp, lambda x: x.sum(axis=axis))


def mean(a):
    return scale(sum(a), 1.0 / a.data.size)


def softmax(x, mask=None):
    """Softmax over the last axis with row-max subtraction.

    ``mask`` is a boolean array broadcastable to ``x``; False entries get
    probability zero.  Every row must keep at least one entry.
    """
    def fwd(v):
        if mask is not None:
            v = np.where(mask, v, -np.inf)
        v = v - v.max(axis=-1, keepdims=True)
        e = np.exp(v)
        return e / e.sum(axis=-1, keepdims=True)

    if x.data.size == 0:
        raise ValueError("empty input")
    y = fwd(x.data)
    return _record("softmax", (x,), y,
                   lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), fwd)


def softmax_rows(m):
    if m.ndim != 2:
        raise ValueError(f"softmax_rows expects a rank-2 tensor, got rank {m.ndim}")
    if m.data.size == 0:
        raise ValueError("empty input")
    return softmax(m)


def layer_norm(x, gain, bias, eps=1e-5):
    def fwd(v, gm, bt):
        mu = v.mean(axis=-1, keepdims=True)
        xc = v - mu
        return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps) * gm + bt

    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gm = gain.data
    d = v.shape[-1]

    def vjp(g):
        gx_hat = g * gm
        gx = inv / d * (d * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gm.shape), _unbroadcast(g, bias.shape)

    return _record("layer_norm", (x, gain, bias), xhat * gm + bias.data, vjp, fwd)


# --------------------------------------------------------------------------
# indexing


def embedding(table, ids):
    """Row lookup; id -1 marks padding and yields a zero row."""
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if np.any(ids >= V) or np.any(ids < -1):
        bad = ids[(ids >= V) | (ids < -1)][0]
        raise ValueError(f"id {bad} outside table of size {V}")

    def fwd(tab):
        out = tab[np.where(ids < 0, 0, ids)]
        out[ids < 0] = 0.0
        return out

    def vjp(g):
        gt = np.zeros_like(table.data)
        keep = ids >= 0
        np.add.at(gt, ids[keep], g[keep])
        return (gt,)

    return _record("embedding", (table,), fwd(table.data), vjp, fwd)


def gather_rows(x, idx):
    """``out[b, l] = x[b, idx[b, l]]`` along axis 1; -1 gives a zero row."""
    idx = np.asarray(idx, dtype=np.int64)
    B = x.shape[0]
    bidx = np.arange(B)[:, None]
    safe = np.where(idx < 0, 0, idx)
    pad = idx < 0
    shape = x.shape

    def fwd(v):
        out = v[bidx, safe]
        out[pad] = 0.0
        return out

    def vjp(g):
        gx = np.zeros(shape)
        keep = ~pad
        np.add.at(gx, (np.broadcast_to(bidx, idx.shape)[keep], idx[keep]), g[keep])
        return (gx,)

    return _record("gather_rows", (x,), fwd(x.data), vjp, fwd)


def stack_frames(x, s):
    """(B, T, F) -> (B, ceil(T/s), s*F): zero-pad time, then fold s frames together."""
    B, T, F = x.shape
    T2 = -(-T // s)

    def fwd(v):
        pad = np.zeros((B, T2 * s, F))
        pad[:, :T] = v
        return pad.reshape(B, T2, s * F)

    return _record("stack_frames", (x,), fwd(x.data),
                   lambda g: (g.reshape(B, T2 * s, F)[:, :T].copy(),), fwd)


def depthwise_conv1d(x, w):
    """Per-channel 'same' convolution over time: x (B, T, d), w (k, d), k odd."""
    k = w.shape[0]
    half = k // 2
    T = x.shape[1]

    def fwd(v, ww):
        pad = np.pad(v, ((0, 0), (half, half), (0, 0)))
        out = np.zeros_like(v)
        for j in range(k):
            out += pad[:, j:j + T] * ww[j]
        return out

    xv, wv = x.data, w.data

    def vjp(g):
        pad = np.pad(xv, ((0, 0), (half, half), (0, 0)))
        gpad = np.zeros_like(pad)
        gw = np.zeros_like(wv)
        for j in range(k):
            gpad[:, j:j + T] += g * wv[j]
            gw[j] = (g * pad[:, j:j + T]).sum(axis=(0, 1))
        return gpad[:, half:half + T], gw

    return _record("depthwise_conv1d", (x, w), fwd(xv, wv), vjp, fwd)


# --------------------------------------------------------------------------
# recurrence


def gru(x, w_x, w_h, b_x, b_h, lengths):
    """Unidirectional GRU over (B, T, D); returns the hidden state after each
    sequence's last valid step, shape (B, H).

    Gates follow the reset/update/new layout; the new-gate candidate is
    ``tanh(x W_n + b_n + r * (h W_hn + b_hn))``.
    """
    gx = add(matmul(x, w_x), b_x)
    lengths = np.asarray(lengths, dtype=np.int64)
    B = gx.shape[0]
    cache = kernels.gru_forward(gx.data, w_h.data, b_h.data, lengths)
    hs = cache[0]
    last = np.minimum(lengths, gx.shape[1])
    h_final = hs[np.arange(B), last]

    def fwd(gxv, whv, bhv):
        c = kernels.gru_forward(gxv, whv, bhv, lengths)
        return c[0][np.arange(B), last]

    def vjp(g):
        dgx, dwh, dbh = kernels.gru_backward(g, w_h.data, lengths, cache)
        return dgx, dwh, dbh

    return _record("gru", (gx, w_h, b_h), h_final, vjp, fwd)
