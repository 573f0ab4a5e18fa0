"""Binary containers and text resources.

Matrix containers (``FEAT`` feature files, ``ATTN`` attention exports)::

    magic (4 bytes) | version (uint8) | count (int32 LE)
    per matrix:  FEAT: rows, cols (int32 LE)        then rows*cols float64 LE
                 ATTN: layer, head, L (int32 LE)    then L*L float64 LE

Checkpoints::

    b"MMKW" | version (uint8) | manifest length (uint32 LE) | manifest JSON
    then every tensor as float64 LE, in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

VERSION = 1


class FormatError(ValueError):
    pass


class CheckpointError(FormatError):
    pass


def _check_header(buf: bytes, magic: bytes, what: str, exc=FormatError):
    if len(buf) < 5 or buf[:4] != magic:
        raise exc(f"bad {what} header")
    if buf[4] != VERSION:
        raise exc(f"unsupported {what} version {buf[4]}")


def save_feats(path, mats):
    parts = [b"FEAT", bytes([VERSION]), struct.pack("<i", len(mats))]
    for m in mats:
        m = np.asarray(m, dtype="<f8")
        parts.append(struct.pack("<ii", *m.shape))
        parts.append(m.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_feats(path):
    buf = Path(path).read_bytes()
    _check_header(buf, b"FEAT", "feature file")
    (count,) = struct.unpack_from("<i", buf, 5)
    off, out = 9, []
    for _ in range(count):
        rows, cols = struct.unpack_from("<ii", buf, off)
        off += 8
        n = rows * cols
        out.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(rows, cols).astype(np.float64))
        off += 8 * n
    return out


def load_feat_ref(ref: str):
    """``path`` or ``path:index`` into a FEAT container."""
    path, idx = ref, 0
    if ":" in ref and ref.rsplit(":", 1)[1].isdigit():
        path, idx = ref.rsplit(":", 1)
    return load_feats(path)[int(idx)]


def save_attention(path, maps):
    """``maps``: list over layers of (heads, L, L) arrays."""
    entries = [(li, h, m[h]) for li, m in enumerate(maps) for h in range(m.shape[0])]
    parts = [b"ATTN", bytes([VERSION]), struct.pack("<i", len(entries))]
    for li, h, mat in entries:
        parts.append(struct.pack("<iii", li, h, mat.shape[0]))
        parts.append(np.asarray(mat, dtype="<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_attention(path):
    """Returns a list of (layer, head, L x L matrix)."""
    buf = Path(path).read_bytes()
    _check_header(buf, b"ATTN", "attention file")
    (count,) = struct.unpack_from("<i", buf, 5)
    off, out = 9, []
    for _ in range(count):
        layer, head, L = struct.unpack_from("<iii", buf, off)
        off += 12
        out.append((layer, head, np.frombuffer(buf, dtype="<f8", count=L * L, offset=off).reshape(L, L).copy()))
        off += 8 * L * L
    return out


def save_vocab(path, tokens):
    Path(path).write_text("".join(t + "\n" for t in tokens), encoding="utf-8")


def load_vocab(path):
    return Path(path).read_text(encoding="utf-8").splitlines()


def save_checkpoint(path, params: dict, manifest: dict):
    """Write named float64 tensors after a JSON manifest.

    ``manifest`` is extended with a ``tensors`` list (name + shape) in the
    order the tensors are written.
    """
    man = dict(manifest)
    man["format"] = VERSION
    man["tensors"] = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    blob = json.dumps(man, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [b"MMKW", bytes([VERSION]), struct.pack("<I", len(blob)), blob]
    for v in params.values():
        parts.append(np.asarray(v, dtype="<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Returns (manifest, {name: array})."""
    buf = Path(path).read_bytes()
    _check_header(buf, b"MMKW", "checkpoint", CheckpointError)
    (n,) = struct.unpack_from("<I", buf, 5)
    try:
        man = json.loads(buf[9:9 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint manifest: {e}") from None
    off = 9 + n
    tensors = {}
    for t in man["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        if off + 8 * count > len(buf):
            raise CheckpointError("checkpoint truncated")
        tensors[t["name"]] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(t["shape"]).astype(np.float64)
        off += 8 * count
    if off != len(buf):
        raise CheckpointError(f"checkpoint has {len(buf) - off} trailing bytes")
    return man, tensors
