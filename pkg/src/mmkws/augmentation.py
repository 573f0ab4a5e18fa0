"""Confusable keyword mining and synthetic speech rendering.

Text side: lexicon lookup with a letter-rule fallback (G2P), phoneme edit
distance, phonetic / semantic nearest neighbours and word permutations.
Audio side: a deterministic prototype renderer that turns a phoneme
sequence into a filterbank-like feature matrix.
"""
from __future__ import annotations

import itertools
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

# Letter rules for words missing from the lexicon; longest match first.
LETTER_RULES = {
    "tch": ("CH",), "sh": ("SH",), "ch": ("CH",), "th": ("TH",), "ng": ("NG",), "ph": ("F",),
    "ck": ("K",), "ee": ("IY",), "oo": ("UW",), "ai": ("EY",), "oa": ("OW",), "ou": ("AW",),
    "oy": ("OY",), "aw": ("AO",), "er": ("ER",),
    "a": ("AE",), "b": ("B",), "c": ("K",), "d": ("D",), "e": ("EH",), "f": ("F",),
    "g": ("G",), "h": ("HH",), "i": ("IH",), "j": ("JH",), "k": ("K",), "l": ("L",),
    "m": ("M",), "n": ("N",), "o": ("AA",), "p": ("P",), "q": ("K",), "r": ("R",),
    "s": ("S",), "t": ("T",), "u": ("AH",), "v": ("V",), "w": ("W",), "x": ("K", "S"),
    "y": ("Y",), "z": ("Z",),
}
_RULE_KEYS = sorted(LETTER_RULES, key=len, reverse=True)


def normalize_word(word: str) -> str:
    return re.sub(r"[^\w']", "", word.lower()).strip("'")


def letter_rules(word: str) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    while i < len(word):
        for key in _RULE_KEYS:
            if word.startswith(key, i):
                out.extend(LETTER_RULES[key])
                i += len(key)
                break
        else:
            i += 1  # letters without a rule are silent
    return tuple(out)


def _fallback_symbols():
    return {s for seq in LETTER_RULES.values() for s in seq}


@dataclass
class Lexicon:
    """word -> phoneme symbols, with a closed inventory.

    The inventory always includes every symbol the letter rules can emit so
    fallback pronunciations stay inside it.
    """

    entries: dict[str, tuple[str, ...]]
    inventory: list[str] = field(default_factory=list)

    def __post_init__(self):
        for w, seq in self.entries.items():
            if not seq:
                raise ValueError(f"empty pronunciation for {w!r}")
        symbols = {s for seq in self.entries.values() for s in seq} | _fallback_symbols()
        symbols |= set(self.inventory)
        self.inventory = sorted(symbols)
        self._index = {s: i for i, s in enumerate(self.inventory)}
        self._ids: dict[str, tuple[int, ...]] = {}

    def __contains__(self, word):
        return normalize_word(word) in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def words(self):
        return sorted(self.entries)

    def phoneme_id(self, symbol: str) -> int:
        return self._index[symbol]

    def symbols(self, ids) -> tuple[str, ...]:
        return tuple(self.inventory[i] for i in ids)

    def phrase_ids(self, words) -> tuple[int, ...]:
        out = []
        for w in words:
            ids = self._ids.get(w)
            if ids is None:
                ids = self._ids[w] = g2p(w, self)
            out.extend(ids)
        return tuple(out)

    @classmethod
    def load(cls, path) -> "Lexicon":
        entries = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                word, pron = line.split("\t", 1)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>PH1 PH2 ...'") from None
            entries[normalize_word(word)] = tuple(pron.split())
        return cls(entries)

    def save(self, path):
        lines = [f"{w}\t{' '.join(self.entries[w])}" for w in self.words]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def g2p(word: str, lexicon: Lexicon) -> tuple[int, ...]:
    """Phoneme ids for a word: lexicon hit, otherwise the letter rules."""
    w = normalize_word(word)
    if not w:
        raise ValueError("cannot convert an empty word")
    seq = lexicon.entries.get(w)
    if seq is None:
        seq = letter_rules(w) or ("AH",)
    return tuple(lexicon.phoneme_id(s) for s in seq)


def phoneme_edit_distance(a, b) -> int:
    return kernels.levenshtein(a, b)


def _pack(seqs):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = np.fromiter((i for s in seqs for i in s), dtype=np.int64, count=int(offsets[-1]))
    return flat, offsets


def _as_words(phrase):
    return tuple(phrase.split()) if isinstance(phrase, str) else tuple(phrase)


def mine_phonetic_neighbors(target, corpus, k: int, lexicon: Lexicon):
    """The k corpus phrases closest to ``target`` in phoneme edit distance.

    Phrases are word tuples (or space-joined strings).  Ties are broken by
    the space-joined phrase text; the target itself is skipped.  Returns a
    list of ``(phrase, distance)`` sorted ascending.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    target = _as_words(target)
    cands = sorted({_as_words(p) for p in corpus} - {target}, key=" ".join)
    if not cands:
        raise ValueError("corpus has no phrases besides the target")
    if len(cands) < k:
        warnings.warn(f"corpus holds only {len(cands)} candidates, fewer than k={k}", stacklevel=2)
    query = np.array(lexicon.phrase_ids(target), dtype=np.int64)
    flat, offsets = _pack([lexicon.phrase_ids(c) for c in cands])
    dist = kernels.topk_scan(query, flat, offsets, min(k, len(cands)))
    # candidates are already in text order, so a stable sort on distance suffices
    kept = [i for i in np.argsort(np.where(dist < 0, np.iinfo(np.int64).max, dist), kind="stable")
            if dist[i] >= 0]
    return [(cands[i], int(dist[i])) for i in kept[:k]]


def mine_phonetic_neighbors_exhaustive(target, corpus, k: int, lexicon: Lexicon):
    """Reference scan: every distance computed in full, then sorted."""
    target = _as_words(target)
    tq = lexicon.phrase_ids(target)
    scored = [(p, phoneme_edit_distance(tq, lexicon.phrase_ids(p)))
              for p in {_as_words(p) for p in corpus} - {target}]
    scored.sort(key=lambda pd: (pd[1], " ".join(pd[0])))
    return scored[:k]


@dataclass
class SemanticTable:
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        dims = {v.shape for v in self.vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"mixed vector dimensions: {sorted(dims)}")
        for w, v in self.vectors.items():
            if not np.any(v):
                raise ValueError(f"zero vector for {w!r}")

    def __contains__(self, word):
        return word in self.vectors

    @classmethod
    def load(cls, path) -> "SemanticTable":
        vecs = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            parts = line.split()
            if len(parts) < 2:
                continue
            vecs[parts[0]] = np.array([float(v) for v in parts[1:]])
        return cls(vecs)

    def save(self, path):
        lines = [w + " " + " ".join(repr(float(x)) for x in self.vectors[w]) for w in sorted(self.vectors)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cosine(u, v) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def mine_semantic_neighbors(target: str, table: SemanticTable, k: int):
    """Top-k words by cosine similarity to ``target`` (descending, ties by word)."""
    if target not in table:
        raise KeyError(f"{target!r} not in semantic table")
    words = sorted(w for w in table.vectors if w != target)
    if not words:
        return []
    M = np.stack([table.vectors[w] for w in words])
    u = table.vectors[target]
    cos = (M @ u) / (np.linalg.norm(M, axis=1) * np.linalg.norm(u))
    order = np.argsort(-cos, kind="stable")
    return [(words[i], float(cos[i])) for i in order[:k]]


PERMUTATION_CAP = 24


def permute_words(phrase) -> list[tuple[str, ...]]:
    words = _as_words(phrase)
    if len(words) < 2:
        return []
    perms = sorted(set(itertools.permutations(words)) - {words})
    return perms[:PERMUTATION_CAP]


@dataclass
class ConfusableSet:
    target: tuple[str, ...]
    phonetic: list = field(default_factory=list)
    semantic: list = field(default_factory=list)
    permutations: list = field(default_factory=list)

    def records(self):
        tgt = " ".join(self.target)
        for phrase, d in self.phonetic:
            yield {"target": tgt, "kind": "phonetic", "candidate": " ".join(phrase), "score": d}
        for word, c in self.semantic:
            yield {"target": tgt, "kind": "semantic", "candidate": word, "score": c}
        for phrase in self.permutations:
            yield {"target": tgt, "kind": "permutation", "candidate": " ".join(phrase), "score": None}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())


def mine_confusables(target, corpus, lexicon, k=10, semantic_table=None) -> ConfusableSet:
    """Phonetic neighbours, semantic neighbours of each word, and permutations."""
    target = _as_words(target)
    out = ConfusableSet(target)
    out.phonetic = mine_phonetic_neighbors(target, corpus, k, lexicon)
    if semantic_table is not None:
        key = " ".join(target)
        if key in semantic_table:
            out.semantic = mine_semantic_neighbors(key, semantic_table, k)
        elif len(target) > 1 and all(w in semantic_table for w in target):
            pooled = {}
            for w in target:
                for cand, c in mine_semantic_neighbors(w, semantic_table, k):
                    pooled[cand] = max(c, pooled.get(cand, -2.0))
            out.semantic = sorted(pooled.items(), key=lambda wc: (-wc[1], wc[0]))[:k]
        else:
            warnings.warn(f"{key!r} not in semantic table; semantic neighbours skipped", stacklevel=2)
    out.permutations = permute_words(target)
    return out


# --------------------------------------------------------------------------
# synthetic speech


@dataclass(frozen=True)
class RenderProfile:
    noise: float = 0.8
    min_frames: int = 3
    max_frames: int = 8
    fixed_frames: int | None = None


class SpeechRenderer:
    """Maps phoneme ids to feature frames through fixed random prototypes.

    Prototypes are drawn once from ``corpus_seed``.  For one rendering the
    generator ``default_rng(seed)`` first draws every phoneme duration
    (``integers(min_frames, max_frames + 1, size=len(p))``), then the noise
    matrix (``standard_normal((T, n_mels))``).
    """

    def __init__(self, n_phonemes: int, n_mels: int = 40, corpus_seed: int = 0):
        self.n_mels = n_mels
        self.prototypes = np.random.default_rng(corpus_seed).standard_normal((n_phonemes, n_mels))

    def render(self, phonemes, seed: int, profile: RenderProfile = RenderProfile()) -> np.ndarray:
        ids = np.asarray(phonemes, dtype=np.int64)
        rng = np.random.default_rng(seed)
        if profile.fixed_frames is not None:
            durations = np.full(len(ids), profile.fixed_frames)
        else:
            durations = rng.integers(profile.min_frames, profile.max_frames + 1, size=len(ids))
        frames = np.repeat(self.prototypes[ids], durations, axis=0)
        if profile.noise > 0:
            frames = frames + profile.noise * rng.standard_normal(frames.shape)
        return frames


def render_synthetic_speech(p, seed, profile=RenderProfile(), renderer: SpeechRenderer | None = None):
    if renderer is None:
        raise ValueError("a SpeechRenderer carrying the phoneme prototypes is required")
    return renderer.render(p, seed, profile)


# --------------------------------------------------------------------------
# toy resources

_VOWELS = ["AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"]
_CONSONANTS = ["B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R",
               "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH"]
_SPELL = {
    "AA": "o", "AE": "a", "AH": "u", "AO": "aw", "AW": "ow", "AY": "i", "EH": "e", "ER": "er",
    "EY": "ay", "IH": "y", "IY": "ee", "OW": "oa", "OY": "oy", "UH": "uu", "UW": "oo",
    "B": "b", "CH": "ch", "D": "d", "DH": "dh", "F": "f", "G": "g", "HH": "h", "JH": "j",
    "K": "k", "L": "l", "M": "m", "N": "n", "NG": "ng", "P": "p", "R": "r", "S": "s",
    "SH": "sh", "T": "t", "TH": "th", "V": "v", "W": "w", "Y": "yh", "Z": "z", "ZH": "zh",
}


def make_toy_lexicon(n_words: int = 800, seed: int = 0, variant_rate: float = 0.5) -> Lexicon:
    """Pronounceable pseudo-words; about ``variant_rate`` of them are one-phoneme
    variants of another word so that close phonetic neighbours exist."""
    rng = np.random.default_rng(seed)
    onsets = [c for c in _CONSONANTS if c not in ("NG", "ZH")]
    entries: dict[str, tuple[str, ...]] = {}
    prons: list[tuple[str, ...]] = []
    seen = set()

    def add(pron):
        word = "".join(_SPELL[p] for p in pron)
        if pron in seen or word in entries:
            return
        seen.add(pron)
        entries[word] = pron
        prons.append(pron)

    while len(entries) < n_words:
        if prons and rng.random() < variant_rate:
            base = prons[rng.integers(len(prons))]
            pos = int(rng.integers(len(base)))
            pool = _VOWELS if base[pos] in _VOWELS else onsets
            new = list(base)
            new[pos] = pool[rng.integers(len(pool))]
            add(tuple(new))
            continue
        pron = []
        for _ in range(1 if rng.random() < 0.7 else 2):
            pron.append(onsets[rng.integers(len(onsets))])
            pron.append(_VOWELS[rng.integers(len(_VOWELS))])
            if rng.random() < 0.4:
                pron.append(_CONSONANTS[rng.integers(len(_CONSONANTS))])
        add(tuple(pron))
    return Lexicon(entries)


def make_toy_semantic_table(words, dim: int = 16, n_topics: int = 20, seed: int = 0) -> SemanticTable:
    """Clustered random vectors: each word sits near one of ``n_topics`` centres."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_topics, dim))
    vecs = {}
    for w in sorted(words):
        v = centres[rng.integers(n_topics)] + 0.3 * rng.standard_normal(dim)
        vecs[w] = v
    return SemanticTable(vecs)
