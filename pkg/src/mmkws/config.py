"""Model / training configuration, the key=value config grammar, and hashing.

Config file grammar (one assignment per line)::

    # comment
    key = value        # value: int, float, true/false, or a string
    name = "quoted"    # quotes are optional and stripped

Keys are the dataclass field names.  Resolution order is
file < environment (``MMKWS_<KEY>`` upper-cased) < command-line flag.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class ModelConfig:
    n_mels: int = 40
    d: int = 32
    heads: int = 4
    enc_layers: int = 2
    attn_layers: int = 2
    gru_hidden: int = 32
    subsample: int = 2
    ff_mult: int = 2
    conv_kernel: int = 3
    phone_dim: int = 32
    text_dim: int = 16
    speech_dim: int = 24
    n_phonemes: int = 39
    vocab_size: int = 1
    freeze_support_speech: bool = True

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.d % 2:
            raise ValueError("d must be even for sinusoidal positions")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")

    @classmethod
    def tiny(cls, **kw):
        base = dict(n_mels=6, d=4, heads=1, enc_layers=1, attn_layers=1, gru_hidden=4,
                    phone_dim=3, text_dim=3, speech_dim=5, n_phonemes=7, vocab_size=6)
        base.update(kw)
        return cls(**base)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_anchors: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 7
    positives: int = 1
    hard_negatives: int = 1
    random_negatives: int = 1
    aux_loss: bool = True
    use_confusables: bool = True
    use_speech_branch: bool = True
    template_drop: float = 0.5
    grad_clip: float = 5.0
    log_every: int = 0


def _coerce(raw: str, kind):
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key.replace("-", "_")] = value
    return out


def resolve(cls, file_values=None, env=None, flags=None, prefix="MMKWS_"):
    """Build ``cls`` from layered sources: file < env < flags.

    Unknown keys in the file are ignored (a file may configure several
    dataclasses at once); flags with value None are treated as unset.
    """
    env = os.environ if env is None else env
    known = {f.name: f.type for f in fields(cls)}
    values = {}
    for key, raw in (file_values or {}).items():
        if key in known:
            values[key] = _coerce(str(raw), known[key])
    for key, kind in known.items():
        raw = env.get(prefix + key.upper())
        if raw is not None:
            values[key] = _coerce(raw, kind)
    for key, val in (flags or {}).items():
        if key in known and val is not None:
            values[key] = val
    return cls(**values)


def load_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}


def config_hash(*configs) -> str:
    blob = json.dumps([dataclasses.asdict(c) if dataclasses.is_dataclass(c) else c for c in configs],
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
