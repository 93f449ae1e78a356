"""Hashed n-gram featurization for contextual utterance text.

Features are lowercased word unigrams and bigrams plus per-token character
3-5-grams, hashed into a fixed 2**20 space (collisions accepted), counted,
and L2-normalized. Hashing is blake2b with a Knuth multiplicative fold so
vectors are bitwise reproducible across runs and platforms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

FEATURE_BITS = 20
FEATURE_SPACE = 1 << FEATURE_BITS

_KNUTH = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_WORD_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector: sorted distinct indices in [0, 2**20) with weights."""

    indices: np.ndarray  # int64, sorted ascending
    values: np.ndarray  # float64

    def __len__(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2)))


def hash_feature(key: str) -> int:
    digest = blake2b(key.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return ((h * _KNUTH) & _MASK64) >> (64 - FEATURE_BITS)


def _ngram_keys(text: str) -> list[str]:
    tokens = _WORD_RE.findall(text.lower())
    keys: list[str] = []
    for tok in tokens:
        keys.append("w\x1f" + tok)
        for n in (3, 4, 5):
            if len(tok) >= n:
                for i in range(len(tok) - n + 1):
                    keys.append(f"c{n}\x1f" + tok[i : i + n])
    for a, b in zip(tokens, tokens[1:]):
        keys.append("b\x1f" + a + " " + b)
    return keys


def featurize(context_text: str, normalize: bool = True) -> FeatureVector:
    """Hash the text's n-grams into a counted sparse vector.

    Empty text yields an empty vector. With ``normalize`` the values are
    scaled to unit L2 norm; pass False to inspect raw counts.
    """
    keys = _ngram_keys(context_text)
    if not keys:
        return FeatureVector(
            indices=np.empty(0, dtype=np.int64), values=np.empty(0, dtype=np.float64)
        )
    raw = np.fromiter((hash_feature(k) for k in keys), dtype=np.int64, count=len(keys))
    indices, counts = np.unique(raw, return_counts=True)
    values = counts.astype(np.float64)
    if normalize:
        values /= np.sqrt(np.sum(values**2))
    return FeatureVector(indices=indices, values=values)
