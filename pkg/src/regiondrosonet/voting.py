"""Top-K voting over member score vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Retrieval:
    place: int
    confidence: float


def top_k_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Zero every score below the K-th largest; values tying the K-th are all kept.

    Accepts a single vector or a (T, N) stack, masking each row.
    """
    if k < 1:
        raise InvalidInputError(f"K must be >= 1, got {k}")
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[-1]
    if k >= n:
        return s.copy()
    kth = np.partition(s, n - k, axis=-1)[..., n - k : n - k + 1]
    return np.where(s >= kth, s, 0.0)


def aggregate(masked: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    vectors = [np.asarray(m, dtype=np.float64) for m in masked]
    if not vectors or len({v.shape for v in vectors}) != 1 or vectors[0].ndim != 1:
        raise InvalidInputError("aggregate needs a non-empty list of equal-length vectors")
    stack = np.stack(vectors)
    if stack.shape[1] < 1:
        raise InvalidInputError("aggregate needs a non-empty list of equal-length vectors")
    return stack.sum(axis=0)


def retrieve(votes: np.ndarray, n_voters: int) -> Retrieval:
    v = np.asarray(votes, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise InvalidInputError("vote vector must be a non-empty 1-D array")
    m = int(np.argmax(v))
    return Retrieval(m, float(v[m] / n_voters))


def vote(scores: np.ndarray, k: int) -> Retrieval:
    """Mask, sum and argmax a (T, N) stack of score vectors."""
    scores = np.asarray(scores)
    return retrieve(aggregate(top_k_mask(scores, k)), scores.shape[0])
