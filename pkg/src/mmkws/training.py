"""Labels, the three-term BCE objective, Adam, and the training loop."""
from __future__ import annotations

import dataclasses
import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .augmentation import Lexicon
from .config import ModelConfig, TrainConfig, config_hash
from .corpus import Corpus
from .model import MMKWS, collate
from .numeric import Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def make_labels(query_words, enroll_words, lexicon: Lexicon):
    """(label_utt, labels_phon, labels_text) for a query transcript.

    Utterance label: exact word-sequence match.  Word labels: enrolled word
    occurs anywhere in the transcript.  Phoneme labels: enrolled phoneme
    occurs anywhere in the transcript's phoneme sequence.
    """
    query_words, enroll_words = tuple(query_words), tuple(enroll_words)
    for w in query_words + enroll_words:
        if w not in lexicon:
            raise KeyError(f"word missing from lexicon: {w!r}")
    label_utt = int(query_words == enroll_words)
    present = set(query_words)
    labels_text = [int(w in present) for w in enroll_words]
    q_phones = set(lexicon.phrase_ids(query_words))
    labels_phon = [int(p in q_phones) for p in lexicon.phrase_ids(enroll_words)]
    return label_utt, labels_phon, labels_text


@dataclass
class TrainingPair:
    query: np.ndarray
    enrollment: object
    label_utt: int
    labels_phon: list
    labels_text: list

    def __post_init__(self):
        if self.label_utt == 1 and not (all(self.labels_phon) and all(self.labels_text)):
            raise ValueError("a positive pair must have every unit label set to 1")


def total_loss(result, label_utt, labels_phon, labels_text):
    """L_utt + mean_j L_phon + mean_i L_text for one :class:`MatchResult`."""
    if len(result.p_phon) != len(labels_phon) or len(result.p_text) != len(labels_text):
        raise ValueError("probability and label lengths differ")
    l_utt = nm.bce(result.p_utt, label_utt)
    l_phon = float(np.mean([nm.bce(p, y) for p, y in zip(result.p_phon, labels_phon)]))
    l_text = float(np.mean([nm.bce(p, y) for p, y in zip(result.p_text, labels_text)]))
    return l_utt + l_phon + l_text


def _masked_mean(p: Tensor, labels, lengths):
    """Mean over the batch of the per-example mean BCE over valid units."""
    B, W = p.shape
    y = np.zeros((B, W))
    w = np.zeros((B, W))
    for b, (lab, n) in enumerate(zip(labels, lengths)):
        if len(lab) != n:
            raise ValueError(f"example {b}: {len(lab)} labels for {n} units")
        y[b, :n] = lab
        w[b, :n] = 1.0 / (n * B)
    return nm.sum(nm.mul(nm.bce(p, y), w))


def loss_terms(out, label_utt, labels_phon, labels_text):
    """Batched (L_utt, L_phon, L_text) Tensors for a ForwardOutput."""
    l_utt = nm.mean(nm.bce(out.p_utt, np.asarray(label_utt, dtype=np.float64)))
    l_phon = _masked_mean(out.p_phon, labels_phon, out.phon_len)
    l_text = _masked_mean(out.p_text, labels_text, out.text_len)
    return l_utt, l_phon, l_text


class Adam:
    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    model: MMKWS
    losses: np.ndarray  # (steps, 4): utt, phon, text, total
    config: TrainConfig

    def loss_csv(self) -> str:
        rows = ["step,loss_utt,loss_phon,loss_text,total"]
        rows += [f"{i},{a!r},{b!r},{c!r},{t!r}" for i, (a, b, c, t) in enumerate(self.losses.tolist())]
        return "\n".join(rows) + "\n"


class PairSampler:
    """Anchor-keyword batches: positives, confusable negatives, random negatives.

    Without confusables (or when a keyword has none) the hard slot is filled
    with another random negative.
    """

    def __init__(self, corpus: Corpus, cfg: TrainConfig):
        self.corpus = corpus
        self.cfg = cfg
        self.groups = defaultdict(lambda: defaultdict(list))
        for p in corpus.train_pairs:
            self.groups[p.enroll_text][p.kind].append(p)
        self.anchors = sorted((k for k, g in self.groups.items() if g["positive"]), key=" ".join)
        if not self.anchors:
            raise ValueError("training corpus has no positive pairs")
        if not any(g["easy"] or g["hard"] for g in self.groups.values()):
            raise ValueError("training corpus has no negative pairs")

    def sample(self, rng):
        cfg = self.cfg
        n = min(cfg.batch_anchors, len(self.anchors))
        picked = rng.choice(len(self.anchors), n, replace=False)
        out = []
        for i in picked:
            g = self.groups[self.anchors[i]]
            slots = [("positive", cfg.positives), ("hard", cfg.hard_negatives), ("easy", cfg.random_negatives)]
            for kind, count in slots:
                src = g[kind] if (kind != "hard" or cfg.use_confusables) else []
                if not src:
                    src = g["easy"] or g["hard"] if kind != "positive" else []
                for _ in range(count if src else 0):
                    out.append(src[int(rng.integers(len(src)))])
        return out


def train(corpus: Corpus, model_cfg: ModelConfig, cfg: TrainConfig, model: MMKWS | None = None,
          pairs=None, callback=None) -> TrainResult:
    """Adam on L_utt + L_phon + L_text (L_utt only with ``aux_loss=False``).

    Deterministic given ``cfg.seed``.  ``pairs`` overrides the sampler with a
    fixed list used as the batch at every step.  ``callback(step, model,
    row)`` runs after every optimizer step.
    """
    model = model or MMKWS(model_cfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    trainable = model.trainable()
    opt = Adam(trainable, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    sampler = PairSampler(corpus, cfg) if pairs is None else None
    frozen = model_cfg.freeze_support_speech
    tmpl_cache = {}
    label_cache = {}

    def template_for(pair):
        tmpls = corpus.templates.get(pair.enroll_text, [])
        if not cfg.use_speech_branch or not tmpls or rng.random() < cfg.template_drop:
            return None
        j = int(rng.integers(len(tmpls)))
        if not frozen:
            return tmpls[j]
        key = (pair.enroll_text, j)
        if key not in tmpl_cache:
            tmpl_cache[key] = model.encode_template(tmpls[j])
        return tmpl_cache[key]

    def labels_for(pair):
        key = (pair.query_text, pair.enroll_text)
        if key not in label_cache:
            label_cache[key] = make_labels(pair.query_text, pair.enroll_text, corpus.lexicon)
        return label_cache[key]

    losses = np.zeros((cfg.steps, 4))
    for step in range(cfg.steps):
        batch_pairs = pairs if pairs is not None else sampler.sample(rng)
        tmpls = [template_for(p) for p in batch_pairs]
        labels = [labels_for(p) for p in batch_pairs]
        batch = collate([p.query for p in batch_pairs],
                        [corpus.phoneme_ids(p.enroll_text) for p in batch_pairs],
                        [corpus.subword_ids(p.enroll_text) for p in batch_pairs],
                        tmpls, model_cfg.n_mels, encoded=frozen)
        with nm.Tape() as tape:
            out = model.forward(batch)
            l_utt, l_phon, l_text = loss_terms(out, [lb[0] for lb in labels], [lb[1] for lb in labels],
                                               [lb[2] for lb in labels])
            total = nm.add(nm.add(l_utt, l_phon), l_text) if cfg.aux_loss else l_utt
        row = [l_utt.item(), l_phon.item(), l_text.item(), total.item()]
        if not np.all(np.isfinite(row)):
            ids = [p.pair_id for p in batch_pairs]
            raise TrainingError(f"non-finite loss at step {step}; batch pairs {ids}")
        losses[step] = row
        grads = nm.backward(tape, total)
        gdict = {k: grads[p] for k, p in trainable.items()}
        if cfg.grad_clip > 0:
            norm = np.sqrt(sum(float((g * g).sum()) for g in gdict.values()))
            if norm > cfg.grad_clip:
                gdict = {k: g * (cfg.grad_clip / norm) for k, g in gdict.items()}
        opt.step(gdict)
        if callback is not None:
            callback(step, model, row)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d total %.4f (utt %.4f phon %.4f text %.4f)", step, row[3], *row[:3])
    return TrainResult(model, losses, cfg)


def checkpoint_manifest(model: MMKWS, corpus: Corpus | None, train_cfg: TrainConfig | None):
    man = {"config": dataclasses.asdict(model.cfg),
           "train_config": dataclasses.asdict(train_cfg) if train_cfg else None,
           "config_hash": config_hash(model.cfg, train_cfg) if train_cfg else config_hash(model.cfg)}
    if corpus is not None:
        man["assets"] = {"vocab": corpus.vocab,
                         "lexicon": {w: list(corpus.lexicon.entries[w]) for w in corpus.lexicon.words},
                         "phonemes": corpus.lexicon.inventory}
    return man
