"""Building blocks shared by the encoders and the pattern extractor."""
from __future__ import annotations

import numpy as np

from . import numeric as nm
from .numeric import Tensor


class ParamInit:
    """Creates named parameters in a fixed order from one generator."""

    def __init__(self, params: dict, rng: np.random.Generator):
        self.params = params
        self.rng = rng

    def weight(self, name, fan_in, fan_out, zero=False):
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            w = self.rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        self.params[name] = Tensor(w, requires_grad=True, name=name)

    def vector(self, name, n, value=0.0, std=None):
        v = np.full(n, value, dtype=np.float64) if std is None else std * self.rng.standard_normal(n)
        self.params[name] = Tensor(v, requires_grad=True, name=name)

    def matrix(self, name, shape, std):
        self.params[name] = Tensor(std * self.rng.standard_normal(shape), requires_grad=True, name=name)

    def linear(self, name, fan_in, fan_out, zero=False):
        self.weight(f"{name}.w", fan_in, fan_out, zero)
        self.vector(f"{name}.b", fan_out)

    def layer_norm(self, name, d):
        self.vector(f"{name}.g", d, 1.0)
        self.vector(f"{name}.b", d, 0.0)

    def attention(self, name, d):
        for proj in ("q", "k", "v"):
            self.weight(f"{name}.w{proj}", d, d)
        self.linear(f"{name}.o", d, d)

    def feedforward(self, name, d, mult):
        self.linear(f"{name}.ff1", d, mult * d)
        self.linear(f"{name}.ff2", mult * d, d)


def linear(x, params, name):
    return nm.add(nm.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def layer_norm(x, params, name):
    return nm.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def feedforward(x, params, name):
    return linear(nm.silu(linear(x, params, f"{name}.ff1")), params, f"{name}.ff2")


def sinusoid(T: int, d: int) -> np.ndarray:
    """pos[t, 2i] = sin(t / 10000^(2i/d)), pos[t, 2i+1] = cos(same)."""
    t = np.arange(T, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angle = t / np.power(10000.0, i2 / d)
    pos = np.zeros((T, d))
    pos[:, 0::2] = np.sin(angle)
    pos[:, 1::2] = np.cos(angle[:, : d // 2])
    return pos


def length_mask(lengths, T):
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def self_attention(x: Tensor, key_mask, params, name, heads):
    """Multi-head scaled dot-product self-attention over (B, L, d).

    Returns the output and the attention probabilities (B, heads, L, L).
    """
    B, L, d = x.shape
    dh = d // heads

    def split(t):
        return nm.transpose(nm.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split(nm.matmul(x, params[f"{name}.wq"]))
    k = split(nm.matmul(x, params[f"{name}.wk"]))
    v = split(nm.matmul(x, params[f"{name}.wv"]))
    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    probs = nm.softmax(scores, mask=key_mask[:, None, None, :])
    ctx = nm.reshape(nm.transpose(nm.matmul(probs, v), (0, 2, 1, 3)), (B, L, d))
    return linear(ctx, params, f"{name}.o"), probs.data
