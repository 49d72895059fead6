"""Exact cosine scoring and deterministic top-k retrieval over modality views.

Scores are dot products of unit vectors, accumulated in float64 over the
float32 storage. Ranking never fuzzes comparisons: ties are exact equality
of the 64-bit score and break by ascending item id. ``top_k`` uses a
partition-based selection but is contractually equal to "score everything,
stable-sort by (-score, id), truncate".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimMismatch, EmptyModality
from .store import Modality, ModalityView, QueryRecord


@dataclass(frozen=True)
class ScoredCandidate:
    """One ranked item. ``std_score`` is set only by standardized retrieval."""

    item_id: str
    modality: Modality
    raw_cos: float
    std_score: float | None = None


def _query_vector(query: QueryRecord | np.ndarray) -> np.ndarray:
    vec = query.vector if isinstance(query, QueryRecord) else query
    return np.ascontiguousarray(vec, dtype=np.float64)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two unit vectors: their float64 dot product."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimMismatch(f"cosine over shapes {a.shape} and {b.shape}")
    return float(np.dot(a, b))


def all_scores(query: QueryRecord | np.ndarray, view: ModalityView) -> np.ndarray:
    """Cosine of the query against every view item, aligned to view order."""
    if len(view) == 0:
        raise EmptyModality(f"no {view.modality.value} items to score")
    q = _query_vector(query)
    if q.shape[0] != view.dim:
        raise DimMismatch(
            f"query dimension {q.shape[0]} != store dimension {view.dim}"
        )
    return kernels.matvec(view.prepared, q)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, ordered by (-score, index).

    Selection runs in O(n) via argpartition, then closes over boundary ties
    so the result is exactly the prefix of the full stable sort.
    """
    n = scores.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.intp)
    if k < n:
        part = np.argpartition(-scores, k - 1)[:k]
        threshold = scores[part].min()
        candidates = np.flatnonzero(scores >= threshold)
    else:
        candidates = np.arange(n)
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:k]]


def top_k(query: QueryRecord | np.ndarray, view: ModalityView, k: int) -> list[ScoredCandidate]:
    """The k highest-cosine view items, ties broken by ascending id."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return []
    if len(view) == 0:
        raise EmptyModality(f"top-{k} over an empty {view.modality.value} view")
    scores = all_scores(query, view)
    picks = top_k_indices(scores, k)
    return [
        ScoredCandidate(view.ids[i], view.modality, raw_cos=float(scores[i]))
        for i in picks
    ]
