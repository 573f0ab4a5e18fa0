"""Pattern discriminator: utterance-level fusion and per-unit match heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from . import numeric as nm
from .config import ModelConfig
from .numeric import Tensor
from .pattern import ABSENT, JointEmbedding


@dataclass
class MatchResult:
    p_utt: float
    p_phon: np.ndarray
    p_text: np.ndarray
    attn: dict | None = field(default=None, repr=False)
    boundaries: dict | None = field(default=None, repr=False)

    def to_record(self, **extra):
        rec = {"p_utt": float(self.p_utt), "p_phon": [float(v) for v in self.p_phon],
               "p_text": [float(v) for v in self.p_text]}
        rec.update(extra)
        return rec


def init_discriminator_params(init: layers.ParamInit, cfg: ModelConfig):
    d, h = cfg.d, cfg.gru_hidden
    for g in ("gru_t", "gru_a"):
        init.weight(f"{g}.wx", d, 3 * h)
        init.weight(f"{g}.wh", h, 3 * h)
        init.vector(f"{g}.bx", 3 * h)
        init.vector(f"{g}.bh", 3 * h)
    init.linear("fuse", h, 1)
    init.linear("head_phon", d, 1)
    init.linear("head_text", d, 1)


def run_gru(joint: JointEmbedding, params, name):
    return nm.gru(joint.rows, params[f"{name}.wx"], params[f"{name}.wh"], params[f"{name}.bx"],
                  params[f"{name}.bh"], joint.lengths)


def utterance_score(Ej_ta: JointEmbedding, Ej_aa, params, has_template=None):
    """p_utt = sigmoid(W_u . (h_t + h_a) + b_u), batched.

    ``h_t``/``h_a`` are the final GRU states over the QTAM/QAAM joint rows;
    ``h_a`` is zero when QAAM is absent, or per row where ``has_template`` is
    False.  Returns (p_utt (B,), h_t, h_a).
    """
    if Ej_ta is None or Ej_ta is ABSENT:
        raise ValueError("utterance scoring needs the QTAM joint embedding")
    h_t = run_gru(Ej_ta, params, "gru_t")
    B = h_t.shape[0]
    if Ej_aa is None or Ej_aa is ABSENT:
        h_a = Tensor(np.zeros(h_t.shape))
        fused = h_t
    else:
        h_a = run_gru(Ej_aa, params, "gru_a")
        if has_template is not None:
            h_a = nm.mul(h_a, np.asarray(has_template, dtype=np.float64)[:, None])
        fused = nm.add(h_t, h_a)
    logit = layers.linear(fused, params, "fuse")
    return nm.sigmoid(nm.reshape(logit, (B,))), h_t, h_a


def _range_index(bounds, seg):
    """Packed row indices of segment ``seg`` per batch row, -1 padded."""
    starts = bounds[:, :seg].sum(axis=1)
    n = bounds[:, seg]
    width = max(int(n.max()), 1)
    j = np.arange(width)[None, :]
    return np.where(j < n[:, None], starts[:, None] + j, -1)


def unit_scores(Ej_ta: JointEmbedding, params):
    """Per-phoneme and per-word match probabilities from the support ranges.

    Rows (T_q, T_q + T_p] feed the phoneme head, the next T_t rows the text
    head.  Returns Tensors (B, P_max) and (B, W_max); padded entries are
    meaningless and must be masked by the caller.
    """
    bounds = Ej_ta.boundaries
    if bounds.shape[1] != 3:
        raise ValueError("unit scores need [query, phoneme, text] boundaries")
    if np.any(bounds.sum(axis=1) > Ej_ta.rows.shape[1]):
        raise ValueError("boundaries exceed the joint embedding length")
    out = []
    for seg, head in ((1, "head_phon"), (2, "head_text")):
        rows = nm.gather_rows(Ej_ta.rows, _range_index(bounds, seg))
        logit = layers.linear(rows, params, head)
        out.append(nm.sigmoid(nm.reshape(logit, logit.shape[:2])))
    return out[0], out[1]
