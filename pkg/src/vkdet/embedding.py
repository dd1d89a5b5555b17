"""Unit-norm embedding records, cosine similarity, and temperature softmax.

All vectors entering the pipeline are renormalized to unit length, so cosine
similarity is a plain dot product. Softmax probabilities are computed with
max-subtraction and stay finite for |similarity / tau| up to at least 1e4.

Similarity-based scores downstream are softmax probabilities (higher is more
confident). The literal negative-log form is available behind a flag on the
inference config for side-by-side comparison; it changes only what is
reported, never how candidates are ranked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KIND_REGION = "region"
KIND_ROI = "roi_feature"
KIND_TEXT_BASE = "text_base"
KIND_TEXT_NOVEL = "text_novel"

_KINDS = (KIND_REGION, KIND_ROI, KIND_TEXT_BASE, KIND_TEXT_NOVEL)


def unit(v: np.ndarray) -> np.ndarray:
    """Copy of v scaled to unit L2 norm; rejects zero or non-finite input."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("vector must be finite")
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def unit_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a matrix."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("cannot normalize zero rows")
    return m / norms


@dataclass
class EmbeddingRecord:
    """A keyed unit vector; normalized on construction."""

    key: str
    vector: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown embedding kind: {self.kind!r}")
        self.vector = unit(self.vector)


@dataclass
class CategorySpace:
    """Disjoint base and novel class names plus the latent unknown count."""

    base: list[str]
    novel: list[str]
    k_unknown: int = 20

    def __post_init__(self):
        overlap = set(self.base) & set(self.novel)
        if overlap:
            raise ValueError(f"base and novel classes overlap: {sorted(overlap)}")
        if self.k_unknown < 1:
            raise ValueError("k_unknown must be >= 1")

    @property
    def unknown_names(self) -> list[str]:
        return [f"unknown-{j}" for j in range(1, self.k_unknown + 1)]

    @property
    def all_names(self) -> list[str]:
        return list(self.base) + list(self.novel)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


def softmax(values: np.ndarray, tau: float) -> np.ndarray:
    """Stable softmax of values / tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    z = np.asarray(values, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_prob(
    query: np.ndarray, bank, target_index: int, tau: float
) -> float:
    """Probability of bank[target_index] under the similarity softmax.

    bank is a sequence of vectors or a (rows, d) matrix of unit rows.
    """
    bank = np.asarray(bank, dtype=np.float64)
    if bank.ndim != 2 or bank.shape[0] < 1:
        raise ValueError("bank must be a non-empty matrix of row vectors")
    if not 0 <= target_index < bank.shape[0]:
        raise IndexError(f"target_index {target_index} out of range")
    sims = bank @ np.asarray(query, dtype=np.float64)
    return float(softmax(sims, tau)[target_index])
