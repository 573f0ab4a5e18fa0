"""Cross-modal pattern extractor: QTAM (query vs phoneme + text) and QAAM
(query vs speech template).

Each segment gets sinusoidal positions (restarting at 0 per segment) and a
learnable type code, the segments are concatenated along time, and a stack
of pre-norm self-attention blocks produces the joint embedding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from . import numeric as nm
from .config import ModelConfig
from .numeric import Tensor

TYPE_CODES = ("qtam.query", "qtam.phone", "qtam.text", "qaam.query", "qaam.speech")


class _Absent:
    """Marker returned by QAAM when no speech template is enrolled."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __bool__(self):
        return False

    def __repr__(self):
        return "ABSENT"


ABSENT = _Absent()


@dataclass
class JointEmbedding:
    """Packed joint rows (B, L, d); ``boundaries[b]`` lists segment lengths."""

    rows: Tensor
    boundaries: np.ndarray

    @property
    def lengths(self):
        return self.boundaries.sum(axis=1)

    def example(self, b=0):
        n = int(self.lengths[b])
        return self.rows.data[b, :n], [int(v) for v in self.boundaries[b]]


@dataclass
class AttentionMap:
    """Per layer an array (B, heads, L, L); rows beyond a length are padding."""

    layers: list
    lengths: np.ndarray

    def example(self, b=0):
        n = int(self.lengths[b])
        return [m[b, :, :n, :n] for m in self.layers]


def init_pattern_params(init: layers.ParamInit, cfg: ModelConfig):
    for code in TYPE_CODES:
        init.vector(f"type.{code}", cfg.d, std=0.1)
    for mod in ("qtam", "qaam"):
        for i in range(cfg.attn_layers):
            blk = f"{mod}.l{i}"
            init.layer_norm(f"{blk}.ln_att", cfg.d)
            init.attention(f"{blk}.att", cfg.d)
            init.layer_norm(f"{blk}.ln_ff", cfg.d)
            init.feedforward(blk, cfg.d, cfg.ff_mult)
        init.layer_norm(f"{mod}.ln_out", cfg.d)


def add_pos_type(E, code: str, params, positional=True):
    """E + e_pos + e_type with positions counted from 0 within this segment."""
    E = nm.as_tensor(E)
    e_type = params[f"type.{code}"]
    if E.shape[-1] != e_type.shape[0]:
        raise ValueError(f"segment width {E.shape[-1]} != model width {e_type.shape[0]}")
    out = nm.add(E, e_type)
    if positional:
        out = nm.add(out, layers.sinusoid(E.shape[-2], E.shape[-1]))
    return out


def pack_segments(segments, lengths):
    """Concatenate padded (B, T_i, d) segments in time and squeeze out padding.

    Returns the packed tensor (B, L_max, d) and boundaries (B, n_segments).
    """
    cat = nm.concat(segments, axis=1)
    widths = [s.shape[1] for s in segments]
    starts = np.concatenate([[0], np.cumsum(widths)[:-1]])
    bounds = np.stack([np.asarray(n, dtype=np.int64) for n in lengths], axis=1)
    total = bounds.sum(axis=1)
    L = max(int(total.max()), 1)
    idx = np.full((cat.shape[0], L), -1, dtype=np.int64)
    for b in range(cat.shape[0]):
        parts = [start + np.arange(bounds[b, j]) for j, start in enumerate(starts)]
        row = np.concatenate(parts)
        idx[b, : row.size] = row
    return nm.gather_rows(cat, idx), bounds


def attend(x: Tensor, lengths, params, prefix: str, cfg: ModelConfig):
    mask = layers.length_mask(lengths, x.shape[1])
    maps = []
    for i in range(cfg.attn_layers):
        blk = f"{prefix}.l{i}"
        h, probs = layers.self_attention(layers.layer_norm(x, params, f"{blk}.ln_att"), mask, params,
                                         f"{blk}.att", cfg.heads)
        maps.append(probs)
        x = nm.add(x, h)
        x = nm.add(x, layers.feedforward(layers.layer_norm(x, params, f"{blk}.ln_ff"), params, blk))
    return layers.layer_norm(x, params, f"{prefix}.ln_out"), AttentionMap(maps, np.asarray(lengths))


def qtam_batch(q, lq, p, lp, t, lt, params, cfg: ModelConfig, positional=True):
    if min(np.min(lq), np.min(lp), np.min(lt)) < 1:
        raise ValueError("QTAM requires all three segments")
    segs = [add_pos_type(q, "qtam.query", params, positional),
            add_pos_type(p, "qtam.phone", params, positional),
            add_pos_type(t, "qtam.text", params, positional)]
    joint, bounds = pack_segments(segs, [lq, lp, lt])
    rows, maps = attend(joint, bounds.sum(axis=1), params, "qtam", cfg)
    return JointEmbedding(rows, bounds), maps


def qaam_batch(q, lq, s, ls, params, cfg: ModelConfig, positional=True):
    """QAAM over a batch; rows with ``ls == 0`` see only their query segment
    (their output is discarded downstream)."""
    if np.min(lq) < 1:
        raise ValueError("QAAM requires a non-empty query")
    segs = [add_pos_type(q, "qaam.query", params, positional),
            add_pos_type(s, "qaam.speech", params, positional)]
    joint, bounds = pack_segments(segs, [lq, ls])
    rows, maps = attend(joint, bounds.sum(axis=1), params, "qaam", cfg)
    return JointEmbedding(rows, bounds), maps


def _batched(e):
    rows = e.rows if hasattr(e, "rows") else nm.as_tensor(e)
    if rows.data.size == 0 or rows.shape[0] == 0:
        return None
    return nm.reshape(rows, (1,) + rows.shape)


def qtam(Eq_a, Es_p, Es_t, params, cfg: ModelConfig, positional=True):
    """Single-example QTAM on (T, d) embedding sequences."""
    segs = [_batched(e) for e in (Eq_a, Es_p, Es_t)]
    if any(s is None for s in segs):
        raise ValueError("QTAM requires all three segments")
    return qtam_batch(segs[0], [segs[0].shape[1]], segs[1], [segs[1].shape[1]],
                      segs[2], [segs[2].shape[1]], params, cfg, positional)


def qaam(Eq_a, Es_a, params, cfg: ModelConfig, positional=True):
    """Single-example QAAM; returns ``(ABSENT, None)`` without a template."""
    q = _batched(Eq_a)
    if q is None:
        raise ValueError("QAAM requires a non-empty query")
    if Es_a is None or Es_a is ABSENT:
        return ABSENT, None
    s = _batched(Es_a)
    if s is None:
        return ABSENT, None
    return qaam_batch(q, [q.shape[1]], s, [s.shape[1]], params, cfg, positional)
