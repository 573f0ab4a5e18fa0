"""Synthetic phrase corpus following the easy/hard pair protocol.

Keywords are random 2-6 word phrases over a lexicon.  Every keyword gets
positive renderings, phonetically confusable negatives (one word swapped
for a close lexicon neighbour, plus word permutations) and random easy
negatives.  Test keywords never occur in any training pair.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import augmentation as aug
from . import io as mio
from .augmentation import Lexicon, RenderProfile, SpeechRenderer

UNK = "<unk>"


@dataclass
class CorpusConfig:
    n_train: int = 300
    n_test: int = 60
    min_words: int = 2
    max_words: int = 6
    d_hard: int = 2
    n_mels: int = 40
    noise: float = 0.8
    word_neighbors: int = 8
    train_positives: int = 6
    train_hard: int = 4
    train_easy: int = 6
    train_templates: int = 2
    test_per_split: int = 2
    test_templates: int = 1
    seed: int = 7


@dataclass
class Enrollment:
    text: tuple
    subwords: tuple
    phonemes: tuple
    templates: list = field(default_factory=list)

    def __post_init__(self):
        if not self.phonemes or not self.subwords:
            raise ValueError("an enrollment needs at least one phoneme and one subword")


@dataclass
class Pair:
    pair_id: str
    query: np.ndarray
    query_text: tuple
    enroll_text: tuple
    label: int
    split: str  # train | easy | hard
    kind: str  # positive | hard | easy


@dataclass
class Corpus:
    config: CorpusConfig
    lexicon: Lexicon
    vocab: list
    renderer: SpeechRenderer
    train_keywords: list
    test_keywords: list
    templates: dict
    train_pairs: list
    test_pairs: list

    def __post_init__(self):
        self._vocab_index = {w: i for i, w in enumerate(self.vocab)}

    def subword_ids(self, words):
        return tuple(self._vocab_index.get(w, 0) for w in words)

    def phoneme_ids(self, words):
        return self.lexicon.phrase_ids(words)

    def enrollment(self, words, n_templates=None) -> Enrollment:
        words = tuple(words)
        tmpl = self.templates.get(words, [])
        if n_templates is not None:
            tmpl = tmpl[:n_templates]
        return Enrollment(words, self.subword_ids(words), self.phoneme_ids(words), list(tmpl))

    def render(self, words, seed):
        return self.renderer.render(self.phoneme_ids(words), seed, RenderProfile(noise=self.config.noise))


def build_vocab(phrases) -> list:
    words = sorted({w for p in phrases for w in p})
    return [UNK] + [w for w in words if w != UNK]


def _seed_stream(rng):
    while True:
        yield int(rng.integers(2**31 - 1))


def _word_neighbors(lexicon, words, k, d_hard):
    out = {}
    for w in words:
        near = aug.mine_phonetic_neighbors((w,), [(v,) for v in words], k, lexicon)
        out[w] = [v[0] for v, d in near if 1 <= d <= d_hard]
    return out


def confusable_phrases(keyword, neighbors, lexicon, d_hard, exclude=()):
    """One-word substitutions within ``d_hard`` phonemes plus permutations."""
    kw_ids = lexicon.phrase_ids(keyword)
    out = set()
    for i, w in enumerate(keyword):
        for v in neighbors.get(w, []):
            cand = keyword[:i] + (v,) + keyword[i + 1:]
            d = aug.phoneme_edit_distance(kw_ids, lexicon.phrase_ids(cand))
            if 1 <= d <= d_hard:
                out.add(cand)
    hard = sorted(out - set(exclude) - {keyword})
    perms = [p for p in aug.permute_words(keyword) if p not in exclude]
    return hard, perms


def build_corpus(cfg: CorpusConfig, lexicon: Lexicon) -> Corpus:
    rng = np.random.default_rng(cfg.seed)
    seeds = _seed_stream(rng)
    words = lexicon.words
    if len(words) < cfg.max_words * 4:
        raise ValueError(f"lexicon too small: {len(words)} words for phrases of up to {cfg.max_words}")
    renderer = SpeechRenderer(len(lexicon.inventory), cfg.n_mels, cfg.seed)
    neighbors = _word_neighbors(lexicon, words, cfg.word_neighbors, cfg.d_hard)

    def sample_phrase():
        n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        return tuple(words[i] for i in rng.choice(len(words), n, replace=False))

    # test keywords need at least one confusable substitution
    test_kw, train_kw, seen = [], [], set()
    attempts = 0
    while len(test_kw) < cfg.n_test or len(train_kw) < cfg.n_train:
        attempts += 1
        if attempts > 50 * (cfg.n_test + cfg.n_train):
            raise ValueError("could not draw enough keywords with confusable neighbours "
                             f"(have {len(test_kw)} test / {len(train_kw)} train)")
        kw = sample_phrase()
        if kw in seen:
            continue
        hard, _ = confusable_phrases(kw, neighbors, lexicon, cfg.d_hard)
        if not hard:
            continue
        seen.add(kw)
        (test_kw if len(test_kw) < cfg.n_test else train_kw).append(kw)
    test_set = set(test_kw)

    def easy_negative(kw, pool):
        kw_ids = lexicon.phrase_ids(kw)
        for _ in range(1000):
            cand = pool[int(rng.integers(len(pool)))] if rng.random() < 0.5 else sample_phrase()
            if cand in test_set and pool is not test_kw:
                continue
            if cand != kw and aug.phoneme_edit_distance(kw_ids, lexicon.phrase_ids(cand)) > cfg.d_hard:
                return cand
        raise ValueError(f"no easy negative found for {' '.join(kw)!r}")

    def render(phrase):
        return renderer.render(lexicon.phrase_ids(phrase), next(seeds), RenderProfile(noise=cfg.noise))

    templates = {}
    train_pairs, test_pairs = [], []
    for k, kw in enumerate(train_kw):
        templates[kw] = [render(kw) for _ in range(cfg.train_templates)]
        hard, perms = confusable_phrases(kw, neighbors, lexicon, cfg.d_hard, exclude=test_set)
        pool = hard + perms
        for j in range(cfg.train_positives):
            train_pairs.append(Pair(f"tr{k:04d}p{j}", render(kw), kw, kw, 1, "train", "positive"))
        for j in range(min(cfg.train_hard, len(pool))):
            neg = pool[int(rng.integers(len(pool)))]
            train_pairs.append(Pair(f"tr{k:04d}h{j}", render(neg), neg, kw, 0, "train", "hard"))
        for j in range(cfg.train_easy):
            neg = easy_negative(kw, train_kw)
            train_pairs.append(Pair(f"tr{k:04d}e{j}", render(neg), neg, kw, 0, "train", "easy"))

    for k, kw in enumerate(test_kw):
        templates[kw] = [render(kw) for _ in range(cfg.test_templates)]
        hard, _ = confusable_phrases(kw, neighbors, lexicon, cfg.d_hard)
        for split in ("easy", "hard"):
            for j in range(cfg.test_per_split):
                test_pairs.append(Pair(f"te{k:04d}{split[0]}p{j}", render(kw), kw, kw, 1, split, "positive"))
            for j in range(cfg.test_per_split):
                if split == "hard":
                    neg = hard[int(rng.integers(len(hard)))]
                else:
                    neg = easy_negative(kw, test_kw)
                test_pairs.append(Pair(f"te{k:04d}{split[0]}n{j}", render(neg), neg, kw, 0, split, split))

    vocab = build_vocab([p.query_text for p in train_pairs] + [p.enroll_text for p in train_pairs])
    return Corpus(cfg, lexicon, vocab, renderer, train_kw, test_kw, templates, train_pairs, test_pairs)


# --------------------------------------------------------------------------
# multiclass episodes


@dataclass
class Episode:
    targets: list
    unknowns: list
    queries: list  # (frames, phrase, label) with label = target index or "unknown"
    templates: dict


def build_multiclass_episode(corpus: Corpus, n_targets=10, n_unknown=20, seed=0,
                             queries_per_keyword=2, keywords=None) -> Episode:
    pool = list(keywords if keywords is not None else corpus.test_keywords)
    if len(pool) < n_targets + n_unknown:
        raise ValueError(f"need {n_targets + n_unknown} keywords for an episode, have {len(pool)}")
    rng = np.random.default_rng(seed)
    chosen = [pool[i] for i in rng.choice(len(pool), n_targets + n_unknown, replace=False)]
    targets, unknowns = chosen[:n_targets], chosen[n_targets:]
    seeds = _seed_stream(rng)
    queries = []
    for label, group in ((None, targets), ("unknown", unknowns)):
        for i, kw in enumerate(group):
            for _ in range(queries_per_keyword):
                queries.append((corpus.render(kw, next(seeds)), kw, i if label is None else "unknown"))
    templates = {kw: [corpus.render(kw, next(seeds))] for kw in targets}
    return Episode(targets, unknowns, queries, templates)


# --------------------------------------------------------------------------
# on-disk manifests


def _pair_record(p: Pair, ref: str, n_templates: int, tmpl_refs):
    return {"pair_id": p.pair_id, "query_feat": ref, "query_text": " ".join(p.query_text),
            "enroll_text": " ".join(p.enroll_text), "n_templates": n_templates,
            "template_feats": tmpl_refs, "label": p.label, "split": p.split, "kind": p.kind}


def write_corpus(corpus: Corpus, out_dir, run_config=None) -> str:
    """Write lexicon, vocabulary, feature containers and JSONL manifests.

    Returns the corpus config hash embedded in ``corpus.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus.lexicon.save(out / "lexicon.tsv")
    mio.save_vocab(out / "vocab.txt", corpus.vocab)
    tmpl_keys = sorted(corpus.templates, key=" ".join)
    tmpl_mats, tmpl_refs = [], {}
    for kw in tmpl_keys:
        tmpl_refs[kw] = []
        for m in corpus.templates[kw]:
            tmpl_refs[kw].append(f"templates.feat:{len(tmpl_mats)}")
            tmpl_mats.append(m)
    mio.save_feats(out / "templates.feat", tmpl_mats)
    for name, pairs in (("train", corpus.train_pairs), ("test", corpus.test_pairs)):
        mio.save_feats(out / f"{name}.feat", [p.query for p in pairs])
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for i, p in enumerate(pairs):
                refs = tmpl_refs.get(p.enroll_text, [])
                fh.write(json.dumps(_pair_record(p, f"{name}.feat:{i}", len(refs), refs)) + "\n")
    meta = {"config": asdict(corpus.config), "n_phonemes": len(corpus.lexicon.inventory),
            "train_keywords": [" ".join(k) for k in corpus.train_keywords],
            "test_keywords": [" ".join(k) for k in corpus.test_keywords],
            "run_config": run_config or {}}
    meta["config_hash"] = hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]
    (out / "corpus.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return meta["config_hash"]


def _words(text):
    return tuple(text.split())


def load_corpus(data_dir) -> Corpus:
    d = Path(data_dir)
    meta = json.loads((d / "corpus.json").read_text(encoding="utf-8"))
    cfg = CorpusConfig(**meta["config"])
    lexicon = Lexicon.load(d / "lexicon.tsv")
    vocab = mio.load_vocab(d / "vocab.txt")
    renderer = SpeechRenderer(len(lexicon.inventory), cfg.n_mels, cfg.seed)
    feats = {name: mio.load_feats(d / f"{name}.feat") for name in ("train", "test", "templates")}

    def deref(ref):
        fname, idx = ref.rsplit(":", 1)
        return feats[fname.split(".")[0]][int(idx)]

    templates, splits = {}, {}
    for name in ("train", "test"):
        pairs = []
        for line in (d / f"{name}.jsonl").read_text(encoding="utf-8").splitlines():
            r = json.loads(line)
            enroll = _words(r["enroll_text"])
            if enroll not in templates:
                templates[enroll] = [deref(t) for t in r.get("template_feats", [])]
            pairs.append(Pair(r["pair_id"], deref(r["query_feat"]), _words(r["query_text"]), enroll,
                              int(r["label"]), r["split"], r.get("kind", "")))
        splits[name] = pairs
    return Corpus(cfg, lexicon, vocab, renderer, [_words(k) for k in meta["train_keywords"]],
                  [_words(k) for k in meta["test_keywords"]], templates, splits["train"], splits["test"])
