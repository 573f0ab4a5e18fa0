"""The assembled keyword spotter: feature extractor -> QTAM/QAAM -> heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import discriminator as disc
from . import features as fx
from . import numeric as nm
from . import pattern
from .config import ModelConfig
from .layers import ParamInit
from .numeric import Tensor


@dataclass
class Batch:
    query: np.ndarray
    query_len: np.ndarray
    phon: np.ndarray
    phon_len: np.ndarray
    text: np.ndarray
    text_len: np.ndarray
    tmpl: np.ndarray | None = None
    tmpl_len: np.ndarray | None = None
    tmpl_encoded: bool = False  # tmpl holds frozen-encoder outputs, not frames

    @property
    def size(self):
        return self.query.shape[0]

    @property
    def has_template(self):
        if self.tmpl_len is None:
            return np.zeros(self.size, dtype=bool)
        return self.tmpl_len > 0


def collate(queries, phonemes, subwords, templates=None, n_mels=40, encoded=False):
    """Pad a list of examples into a :class:`Batch`.

    ``templates`` holds one array or None per example; with ``encoded=True``
    the arrays are already support-encoder outputs.
    """
    q, ql = fx.pad_frames(queries, n_mels)
    p, pl = fx.pad_ids(phonemes)
    t, tl = fx.pad_ids(subwords)
    tm = tml = None
    if templates is not None and any(x is not None for x in templates):
        width = next(x.shape[1] for x in templates if x is not None)
        mats = [x if x is not None else np.zeros((0, width)) for x in templates]
        tml = np.array([m.shape[0] for m in mats], dtype=np.int64)
        tm = np.zeros((len(mats), max(int(tml.max()), 1), width))
        for i, m in enumerate(mats):
            tm[i, : m.shape[0]] = m
    return Batch(q, ql, p, pl, t, tl, tm, tml, encoded)


@dataclass
class ForwardOutput:
    p_utt: Tensor
    p_phon: Tensor
    p_text: Tensor
    h_t: Tensor
    h_a: Tensor
    qtam: pattern.JointEmbedding
    qtam_attn: pattern.AttentionMap
    qaam: object
    qaam_attn: pattern.AttentionMap | None
    phon_len: np.ndarray
    text_len: np.ndarray


class MMKWS:
    """Parameters plus the batched forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        if params is None:
            params = {}
            init = ParamInit(params, np.random.default_rng(seed))
            fx.init_feature_params(init, cfg)
            pattern.init_pattern_params(init, cfg)
            disc.init_discriminator_params(init, cfg)
        self.params = params

    def trainable(self):
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def state(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def encode_template(self, frames: np.ndarray) -> np.ndarray:
        """Support-encoder output (T', speech_dim) for one template, untracked."""
        out, _ = fx.encode_audio(np.asarray(frames)[None], [len(frames)], self.params, "senc", self.cfg)
        return out.data[0]

    def forward(self, batch: Batch, positional=True) -> ForwardOutput:
        cfg, params = self.cfg, self.params
        q, lq = fx.encode_audio(batch.query, batch.query_len, params, "qenc", cfg)
        p = fx.embed_ids(batch.phon, params, "phone_table", "phone")
        t = fx.embed_ids(batch.text, params, "text_table", "text")
        j_ta, attn_ta = pattern.qtam_batch(q, lq, p, batch.phon_len, t, batch.text_len, params, cfg,
                                           positional)
        has = batch.has_template
        j_aa, attn_aa = pattern.ABSENT, None
        if has.any():
            if batch.tmpl_encoded:
                raw, ls = Tensor(batch.tmpl), batch.tmpl_len
            else:
                lens = np.maximum(batch.tmpl_len, 1)
                raw, ls = fx.encode_audio(batch.tmpl, lens, params, "senc", cfg)
                ls = np.where(has, ls, 0)
            s = fx.map_to_common(raw, "speech", params)
            j_aa, attn_aa = pattern.qaam_batch(q, lq, s, ls, params, cfg, positional)
        p_utt, h_t, h_a = disc.utterance_score(j_ta, j_aa, params, has if has.any() else None)
        p_phon, p_text = disc.unit_scores(j_ta, params)
        return ForwardOutput(p_utt, p_phon, p_text, h_t, h_a, j_ta, attn_ta, j_aa, attn_aa,
                             batch.phon_len, batch.text_len)

    def score(self, phonemes, subwords, query, templates=(), with_attention=False) -> disc.MatchResult:
        """Score one query against one enrollment.

        Several templates each run through QAAM; their final GRU states are
        averaged before fusion.
        """
        templates = [np.asarray(t) for t in templates]
        n = max(len(templates), 1)
        batch = collate([np.asarray(query)] * n, [phonemes] * n, [subwords] * n,
                        templates or None, self.cfg.n_mels)
        out = self.forward(batch)
        if len(templates) <= 1:
            p_utt = float(out.p_utt.data[0])
        else:
            fused = out.h_t.data[0] + out.h_a.data.mean(axis=0)
            logit = fused @ self.params["fuse.w"].data[:, 0] + self.params["fuse.b"].data[0]
            p_utt = nm.sigmoid(float(logit))
        attn = bounds = None
        if with_attention:
            attn = {"qtam": out.qtam_attn.example(0)}
            bounds = {"qtam": out.qtam.example(0)[1]}
            if out.qaam_attn is not None:
                attn["qaam"] = out.qaam_attn.example(0)
                bounds["qaam"] = out.qaam.example(0)[1]
        return disc.MatchResult(p_utt, out.p_phon.data[0, : len(phonemes)].copy(),
                                out.p_text.data[0, : len(subwords)].copy(), attn, bounds)
