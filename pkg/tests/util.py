"""Small builders shared across test modules."""
from __future__ import annotations

import numpy as np

from modalbridge.store import EmbeddingStore, QuerySet


def store_of(items: list[tuple[str, str, list[float]]]) -> EmbeddingStore:
    """items: (id, modality, raw vector). Vectors are normalized on build."""
    records = [{"id": i, "modality": m} for i, m, _ in items]
    vectors = np.array([v for _, _, v in items], dtype=np.float64)
    return EmbeddingStore.from_records(records, vectors)


def queries_of(queries: list[tuple[str, list[float]]], qtypes: dict[str, str] | None = None) -> QuerySet:
    qtypes = qtypes or {}
    records = [{"id": i, "qtype": qtypes.get(i)} for i, _ in queries]
    vectors = np.array([v for _, v in queries], dtype=np.float64)
    return QuerySet.from_records(records, vectors)


def random_store(rng: np.random.Generator, n_text: int, n_image: int, dim: int) -> EmbeddingStore:
    items = []
    for i in range(n_text):
        items.append((f"t{i:05d}", "text", rng.standard_normal(dim).tolist()))
    for i in range(n_image):
        items.append((f"i{i:05d}", "image", rng.standard_normal(dim).tolist()))
    return store_of(items)


def unit(vec: list[float]) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    return arr / np.linalg.norm(arr)


def coincidence_instance():
    """Instance where every query's per-modality argmax is its gold positive.

    Per-query perturbations differ so pair-score spreads are nonzero.
    """
    from modalbridge.store import Qrels

    dim = 8
    items, qrels, queries = [], {}, []
    for i in range(4):
        text_vec = [0.0] * dim
        text_vec[i] = 1.0
        image_vec = [0.0] * dim
        image_vec[i] = 1.0
        image_vec[i + 4] = 0.3 + 0.05 * i
        query_vec = [0.0] * dim
        query_vec[i] = 1.0
        query_vec[i + 4] = 0.05 + 0.03 * i
        items.append((f"t{i}", "text", text_vec))
        items.append((f"i{i}", "image", image_vec))
        queries.append((f"q{i}", query_vec))
        qrels[f"q{i}"] = frozenset({f"t{i}", f"i{i}"})
    return store_of(items), queries_of(queries), Qrels(dict(qrels))
