"""Query and support feature extractors.

The query branch is a small conformer-style encoder (self-attention,
depthwise convolution, feed-forward) over subsampled filterbank frames.
The support branch embeds phoneme ids and subword ids through trainable
tables and encodes speech templates with a second encoder whose weights
stay frozen by default.  Three affine mappers bring the phoneme, text and
speech-template widths to the common dimension ``d``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from . import numeric as nm
from .config import ModelConfig
from .numeric import Tensor

SOURCE_KINDS = ("query_audio", "support_phoneme", "support_text", "support_audio")
MAPPERS = ("phone", "text", "speech")


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_rate_hz: float = 100.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.frames.shape}")

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class EmbeddingSequence:
    rows: Tensor
    source_kind: str

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source_kind!r}")

    @property
    def shape(self):
        return self.rows.shape


def init_encoder(init: layers.ParamInit, prefix: str, cfg: ModelConfig, out_dim: int):
    d = cfg.d
    init.linear(f"{prefix}.in", cfg.subsample * cfg.n_mels, d)
    for i in range(cfg.enc_layers):
        blk = f"{prefix}.l{i}"
        init.layer_norm(f"{blk}.ln_att", d)
        init.attention(f"{blk}.att", d)
        init.layer_norm(f"{blk}.ln_conv", d)
        init.matrix(f"{blk}.conv.dw", (cfg.conv_kernel, d), 1.0 / np.sqrt(cfg.conv_kernel))
        init.linear(f"{blk}.conv.pw", d, d)
        init.layer_norm(f"{blk}.ln_ff", d)
        init.feedforward(f"{blk}", d, cfg.ff_mult)
    init.layer_norm(f"{prefix}.ln_out", d)
    init.linear(f"{prefix}.out", d, out_dim)


def init_feature_params(init: layers.ParamInit, cfg: ModelConfig):
    init_encoder(init, "qenc", cfg, cfg.d)
    init.matrix("phone_table", (cfg.n_phonemes, cfg.phone_dim), 1.0)
    init.matrix("text_table", (cfg.vocab_size, cfg.text_dim), 1.0)
    init.linear("map_phone", cfg.phone_dim, cfg.d)
    init.linear("map_text", cfg.text_dim, cfg.d)
    init_encoder(init, "senc", cfg, cfg.speech_dim)
    init.linear("map_speech", cfg.speech_dim, cfg.d)
    if cfg.freeze_support_speech:
        for name, p in init.params.items():
            if name.startswith("senc."):
                p.requires_grad = False


def pad_frames(mats, n_mels):
    """Stack variable-length (T_i, F) arrays into (B, T_max, F) plus lengths."""
    lengths = np.array([m.shape[0] for m in mats], dtype=np.int64)
    out = np.zeros((len(mats), max(int(lengths.max()), 1), n_mels))
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = m
    return out, lengths


def pad_ids(seqs):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), max(int(lengths.max()), 1)), -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def encode_audio(frames: np.ndarray, lengths, params, prefix: str, cfg: ModelConfig):
    """Batched encoder: (B, T, F) padded frames -> ((B, T', out), lengths')."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths < 1):
        raise ValueError("feature matrix has no frames (T = 0)")
    s = cfg.subsample
    out_len = -(-lengths // s)
    x = nm.stack_frames(Tensor(frames), s)
    T2 = x.shape[1]
    mask = layers.length_mask(out_len, T2)
    keep = Tensor(mask[:, :, None].astype(np.float64))
    x = nm.add(layers.linear(x, params, f"{prefix}.in"), layers.sinusoid(T2, cfg.d))
    for i in range(cfg.enc_layers):
        blk = f"{prefix}.l{i}"
        h, _ = layers.self_attention(layers.layer_norm(x, params, f"{blk}.ln_att"), mask, params,
                                     f"{blk}.att", cfg.heads)
        x = nm.add(x, h)
        h = nm.mul(layers.layer_norm(x, params, f"{blk}.ln_conv"), keep)
        h = nm.depthwise_conv1d(h, params[f"{blk}.conv.dw"])
        x = nm.add(x, layers.linear(nm.silu(h), params, f"{blk}.conv.pw"))
        x = nm.add(x, layers.feedforward(layers.layer_norm(x, params, f"{blk}.ln_ff"), params, blk))
    x = layers.layer_norm(x, params, f"{prefix}.ln_out")
    return layers.linear(x, params, f"{prefix}.out"), out_len


def map_to_common(raw, which: str, params):
    """Per-row affine map ``raw @ W + b`` into the common width."""
    if which not in MAPPERS:
        raise ValueError(f"unknown mapper {which!r}; expected one of {MAPPERS}")
    raw = nm.as_tensor(raw)
    w = params[f"map_{which}.w"]
    if raw.shape[-1] != w.shape[0]:
        raise ValueError(f"mapper {which!r} expects width {w.shape[0]}, got {raw.shape[-1]}")
    return layers.linear(raw, params, f"map_{which}")


def embed_ids(ids: np.ndarray, params, table: str, mapper: str):
    """Batched lookup + mapper; ids (B, T) with -1 padding."""
    return map_to_common(nm.embedding(params[table], ids), mapper, params)


def _check_ids(ids, size, what):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError(f"{what} sequence must be a non-empty 1-D list of ids")
    if ids.min() < 0 or ids.max() >= size:
        raise ValueError(f"{what} id outside inventory of size {size}")
    return ids


def encode_query_audio(f: FeatureMatrix, params, cfg: ModelConfig) -> EmbeddingSequence:
    out, _ = encode_audio(f.frames[None], [f.n_frames], params, "qenc", cfg)
    return EmbeddingSequence(nm.reshape(out, out.shape[1:]), "query_audio")


def encode_support_speech(f: FeatureMatrix, params, cfg: ModelConfig) -> EmbeddingSequence:
    raw, _ = encode_audio(f.frames[None], [f.n_frames], params, "senc", cfg)
    rows = map_to_common(raw, "speech", params)
    return EmbeddingSequence(nm.reshape(rows, rows.shape[1:]), "support_audio")


def embed_phonemes(ids, params, cfg: ModelConfig) -> EmbeddingSequence:
    ids = _check_ids(ids, cfg.n_phonemes, "phoneme")
    rows = embed_ids(ids[None], params, "phone_table", "phone")
    return EmbeddingSequence(nm.reshape(rows, rows.shape[1:]), "support_phoneme")


def embed_subwords(ids, params, cfg: ModelConfig) -> EmbeddingSequence:
    ids = _check_ids(ids, cfg.vocab_size, "subword")
    rows = embed_ids(ids[None], params, "text_table", "text")
    return EmbeddingSequence(nm.reshape(rows, rows.shape[1:]), "support_text")
