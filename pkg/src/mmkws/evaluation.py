"""Detection metrics, multiclass episodes, attention monotonicity, latency."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata, spearmanr

from .corpus import Corpus, Episode
from .model import MMKWS, collate

UNKNOWN = "unknown"


def _split_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.size == 0 or s.shape != y.shape:
        raise ValueError("scores and labels must be non-empty and equally long")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative")
    return s, y, pos, neg


def compute_auc(scores, labels) -> float:
    """P(pos > neg) + 0.5 P(tie), via the Mann-Whitney rank sum."""
    s, y, pos, neg = _split_scores(scores, labels)
    ranks = rankdata(s)  # midranks for ties
    u = ranks[y == 1].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def roc_points(scores, labels):
    """(FPR, TPR) arrays from the threshold sweep, starting at (0, 0)."""
    s, y, pos, neg = _split_scores(scores, labels)
    thr = np.unique(s)[::-1]
    tpr = np.array([0.0] + [(pos >= t).mean() for t in thr])
    fpr = np.array([0.0] + [(neg >= t).mean() for t in thr])
    return fpr, tpr


def compute_auc_trapezoid(scores, labels) -> float:
    fpr, tpr = roc_points(scores, labels)
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def error_rates(scores, labels):
    """FAR and FRR at every distinct score used as an accept threshold
    (accept when score >= threshold), plus one threshold above the maximum."""
    s, y, pos, neg = _split_scores(scores, labels)
    thr = np.append(np.unique(s), np.inf)
    far = (neg[None, :] >= thr[:, None]).mean(axis=1)
    frr = (pos[None, :] < thr[:, None]).mean(axis=1)
    return thr, far, frr


def compute_eer(scores, labels) -> float:
    """Equal error rate, linearly interpolated between neighbouring thresholds."""
    _, far, frr = error_rates(scores, labels)
    diff = far - frr  # starts >= 0 (far = 1) and ends <= 0 (frr = 1)
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0 or i == 0:
        return float(far[i])
    t = diff[i - 1] / (diff[i - 1] - diff[i])
    return float(far[i - 1] + t * (far[i] - far[i - 1]))


# --------------------------------------------------------------------------
# scoring pairs


def score_pairs(model: MMKWS, corpus: Corpus, pairs, use_templates=True, batch_size=32):
    """p_utt for each pair, batched; frozen templates are encoded once."""
    cache = {}

    def tmpl(p):
        if not use_templates:
            return None
        t = corpus.templates.get(p.enroll_text)
        if not t:
            return None
        if p.enroll_text not in cache:
            cache[p.enroll_text] = model.encode_template(t[0])
        return cache[p.enroll_text]

    out = np.zeros(len(pairs))
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        batch = collate([p.query for p in chunk], [corpus.phoneme_ids(p.enroll_text) for p in chunk],
                        [corpus.subword_ids(p.enroll_text) for p in chunk], [tmpl(p) for p in chunk],
                        model.cfg.n_mels, encoded=True)
        out[i:i + len(chunk)] = model.forward(batch).p_utt.data
    return out


def split_metrics(scores, pairs):
    rep = {}
    for split in ("easy", "hard"):
        idx = [i for i, p in enumerate(pairs) if p.split == split]
        if not idx:
            continue
        s = np.asarray(scores)[idx]
        y = np.array([pairs[i].label for i in idx])
        rep[f"auc_{split}"] = compute_auc(s, y)
        rep[f"eer_{split}"] = compute_eer(s, y)
    return rep


# --------------------------------------------------------------------------
# multiclass


def multiclass_classify(scores, threshold=None):
    """Argmax over per-enrollment scores; open-set rejects below ``threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("need at least one enrollment")
    best = int(np.argmax(scores))
    if threshold is not None and scores[best] < threshold:
        return UNKNOWN
    return best


def episode_scores(model: MMKWS, corpus: Corpus, episode: Episode, n_templates=1):
    """Score matrix (queries x targets)."""
    tmpl = {}
    for kw in episode.targets:
        ts = episode.templates.get(kw, [])[:n_templates]
        tmpl[kw] = model.encode_template(ts[0]) if ts else None
    M = np.zeros((len(episode.queries), len(episode.targets)))
    for qi, (frames, _, _) in enumerate(episode.queries):
        batch = collate([frames] * len(episode.targets),
                        [corpus.phoneme_ids(kw) for kw in episode.targets],
                        [corpus.subword_ids(kw) for kw in episode.targets],
                        [tmpl[kw] for kw in episode.targets], model.cfg.n_mels, encoded=True)
        M[qi] = model.forward(batch).p_utt.data
    return M


def episode_accuracy(M, episode: Episode, threshold=None, closed=True):
    labels = [lab for _, _, lab in episode.queries]
    if closed:
        keep = [i for i, lab in enumerate(labels) if lab != UNKNOWN]
        preds = [multiclass_classify(M[i]) for i in keep]
    else:
        keep = list(range(len(labels)))
        preds = [multiclass_classify(M[i], threshold) for i in keep]
    return float(np.mean([p == labels[i] for p, i in zip(preds, keep)]))


def select_threshold(M, episode: Episode):
    """Open-set threshold maximising accuracy on a development episode."""
    cands = np.concatenate([[0.0], np.unique(M.max(axis=1)), [1.0]])
    accs = [episode_accuracy(M, episode, t, closed=False) for t in cands]
    return float(cands[int(np.argmax(accs))])


# --------------------------------------------------------------------------
# attention monotonicity


def monotonicity_score(attn, boundaries, segment=1) -> float:
    """Spearman correlation between support-row index and its argmax query column.

    ``attn`` is (L, L) or (heads, L, L) (heads are averaged).  Rows of
    ``segment`` (default: the first support segment) attending to the query
    columns form the block; fewer than two rows, or argmax columns without
    variance, score 0.
    """
    A = np.asarray(attn, dtype=np.float64)
    if A.ndim == 3:
        A = A.mean(axis=0)
    b = list(boundaries)
    lo = int(np.sum(b[:segment]))
    block = A[lo:lo + b[segment], : b[0]]
    if block.shape[0] < 2:
        return 0.0
    cols = block.argmax(axis=1)
    if np.all(cols == cols[0]):
        return 0.0
    return float(spearmanr(np.arange(len(cols)), cols).statistic)


# --------------------------------------------------------------------------
# latency


@dataclass
class LatencyReport:
    frames: int
    samples_ms: list
    median_ms: float
    p95_ms: float


def bench_latency(model: MMKWS, frame_counts=(100, 200), repetitions=100, warmup=10, n_phonemes=8,
                  n_words=2, seed=0):
    """Wall time of one single-pair score (text-only enrollment) per query length."""
    rng = np.random.default_rng(seed)
    cfg = model.cfg
    phon = list(rng.integers(cfg.n_phonemes, size=n_phonemes))
    words = list(rng.integers(cfg.vocab_size, size=n_words))
    reports = []
    for T in frame_counts:
        q = rng.standard_normal((T, cfg.n_mels))
        for _ in range(warmup):
            model.score(phon, words, q)
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            model.score(phon, words, q)
            samples.append((time.perf_counter() - t0) * 1e3)
        reports.append(LatencyReport(T, samples, float(np.median(samples)), float(np.percentile(samples, 95))))
    return reports
