"""Deterministic text featurizer: signed token hashing with average pooling.

Stands in for a frozen pretrained sentence encoder.  A text is lowercased,
split on whitespace, and every token is hashed to one coordinate of an
m-dimensional vector with a +/-1 sign; the signed one-hot vectors are then
averaged over the token count.  The mapping is a pure function of the text,
so features are bit-identical across runs and platforms.

A precomputed embedding table (JSON Lines, one ``{"text": ..., "vector":
[...]}`` object per line) can override the hashing for texts it covers;
texts missing from the table fall back to hashing.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# Featurizer hash seed is fixed so corpora featurized on different machines
# agree bit for bit.
HASH_SEED = 0


def hash64(token: str, seed: int = HASH_SEED) -> int:
    """64-bit token hash: FNV-1a over UTF-8 bytes, splitmix64 finalizer."""
    h = (_FNV_OFFSET ^ seed) & _MASK64
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    # splitmix64 finalizer for avalanche, so index and sign bits decorrelate
    h = ((h ^ (h >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    h = ((h ^ (h >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (h ^ (h >> 31)) & _MASK64


def featurize(text: str, m: int) -> np.ndarray:
    """Map a text to an m-dimensional averaged signed-hash vector.

    Each token lands on index ``hash % m`` with sign taken from the top hash
    bit (independent of the index for any practical m).  The empty text maps
    to the zero vector.  Total function: never raises for string input.
    """
    if m < 1:
        raise ValueError(f"feature dimension must be >= 1, got {m}")
    vec = np.zeros(m, dtype=np.float64)
    tokens = text.lower().split()
    if not tokens:
        return vec
    for tok in tokens:
        h = hash64(tok)
        sign = -1.0 if (h >> 63) & 1 else 1.0
        vec[h % m] += sign
    vec /= len(tokens)
    return vec


def featurize_pair(text_a: str, text_b: str, m: int) -> np.ndarray:
    """Featurize the concatenation of two texts (single space between)."""
    return featurize(text_a + " " + text_b, m)


def load_embedding_table(path: str | Path, m: int) -> dict[str, np.ndarray]:
    """Read a JSON Lines text-to-vector table, validating dimensions."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if "text" not in obj or "vector" not in obj:
                raise ValueError(f"{path}:{lineno}: expected keys 'text' and 'vector'")
            vec = np.asarray(obj["vector"], dtype=np.float64)
            if vec.shape != (m,):
                raise ValueError(
                    f"{path}:{lineno}: vector has dimension {vec.shape}, expected ({m},)"
                )
            table[obj["text"]] = vec
    return table


class Featurizer:
    """Callable text-to-vector map with an internal cache.

    Wraps :func:`featurize` plus an optional override table.  Cached arrays
    are marked read-only; callers stack or copy them before mutating.
    """

    def __init__(self, m: int, table: dict[str, np.ndarray] | None = None):
        if m < 1:
            raise ValueError(f"feature dimension must be >= 1, got {m}")
        self.m = m
        self.table = table or {}
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is None:
            override = self.table.get(text)
            cached = np.array(override) if override is not None else featurize(text, self.m)
            cached.flags.writeable = False
            self._cache[text] = cached
        return cached


_default: dict[int, Featurizer] = {}


def default_featurizer(m: int) -> Featurizer:
    """Shared hashing featurizer for dimension m (no override table)."""
    feat = _default.get(m)
    if feat is None:
        feat = _default[m] = Featurizer(m)
    return feat
