"""Modality-aware score standardization estimated from pseudo-positive pairs.

The modality gap inflates same-modality cosine scores, so a mixed-corpus
ranking buries cross-modal answers. The fix implemented here:

1. For every calibration query, take its single most similar item *within
   each modality* (ascending-id tie rule) as a pseudo-positive pair.
2. Per modality, estimate the mean and population variance (divisor N) of
   those pair scores. The statistics are frozen and query-independent.
3. At retrieval time, rank candidates by ``(cos - mean_m) / std_m`` instead
   of raw cosine, which puts both modalities on one scale while preserving
   the within-modality order exactly (the map is strictly increasing).

Labeled query-positive pairs can replace pseudo pairs; both go through the
same scoring path, so when every argmax coincides with the gold positive the
two estimates are bit-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ._util import json_line, parallel_map, read_json, write_json
from .errors import (
    DegenerateStats,
    EmptyModality,
    EmptyStore,
    InvalidArtifact,
    MissingModalityStats,
    MissingStats,
    TooFewPairs,
    TooFewQueries,
)
from .similarity import ScoredCandidate, all_scores, cosine, top_k_indices
from .store import MODALITIES, EmbeddingStore, Modality, Qrels, QueryRecord, QuerySet

PAIRS_FORMAT = "mbpairs-v1"
STATS_FORMAT = "mbstats-v1"

STD_FLOOR = 1e-6          # below this, standardization is refused
PAIR_SCORE_TOLERANCE = 1e-7  # pair score vs recomputed cosine


@dataclass(frozen=True)
class PseudoPair:
    """A query and its top-1 item of one modality, with the raw cosine."""

    query_id: str
    item_id: str
    modality: Modality
    score: float


@dataclass(frozen=True)
class ModalityStats:
    """Mean/std/variance of pair scores for one modality."""

    mean: float
    std: float
    variance: float
    count: int

    def __post_init__(self) -> None:
        if self.count < 2:
            raise TooFewPairs(f"need at least 2 pairs, got {self.count}")
        if not (self.std >= STD_FLOOR):
            raise DegenerateStats(
                f"std {self.std!r} is below the {STD_FLOOR} floor"
            )
        if abs(self.std - math.sqrt(self.variance)) > 1e-12:
            raise InvalidArtifact(
                f"std {self.std!r} is not the square root of variance {self.variance!r}"
            )


@dataclass(frozen=True)
class StatsBundle:
    """Frozen per-modality statistics plus provenance.

    ``source`` records whether the pairs were labeled or pseudo;
    ``store_fingerprint`` ties the bundle to the store it was estimated on.
    """

    per_modality: Mapping[Modality, ModalityStats]
    source: str
    store_fingerprint: str = ""

    def __post_init__(self) -> None:
        if self.source not in ("labeled", "pseudo"):
            raise InvalidArtifact(f"source must be 'labeled' or 'pseudo', got {self.source!r}")
        for m in MODALITIES:
            if m not in self.per_modality:
                raise MissingModalityStats(f"bundle lacks {m.value} statistics")

    def for_modality(self, modality: Modality) -> ModalityStats:
        try:
            return self.per_modality[modality]
        except KeyError:
            raise MissingModalityStats(f"no statistics for {modality.value}") from None


def build_pseudo_pairs(
    queries: QuerySet, store: EmbeddingStore, threads: int = 1
) -> dict[Modality, list[PseudoPair]]:
    """For every query, its top-1 item per modality (ascending query-id order).

    Each query contributes one pair to *both* modalities regardless of its
    own question type. Pair scores are re-checked against a direct cosine
    to within 1e-7.
    """
    if len(queries) < 2:
        raise TooFewQueries(f"pseudo pairs need at least 2 queries, got {len(queries)}")
    for m in MODALITIES:
        if len(store.view(m)) == 0:
            raise EmptyModality(f"store has no {m.value} items")

    def pairs_for(query: QueryRecord) -> list[PseudoPair]:
        out = []
        for m in MODALITIES:
            view = store.view(m)
            scores = all_scores(query, view)
            best = int(top_k_indices(scores, 1)[0])
            pair = PseudoPair(query.id, view.ids[best], m, float(scores[best]))
            check = cosine(query.vector, store.get(pair.item_id).vector)
            if abs(pair.score - check) > PAIR_SCORE_TOLERANCE:
                raise InvalidArtifact(
                    f"pair score {pair.score} disagrees with recomputed cosine {check}"
                )
            out.append(pair)
        return out

    per_query = parallel_map(pairs_for, list(queries), threads=threads)
    result: dict[Modality, list[PseudoPair]] = {m: [] for m in MODALITIES}
    for pair_list in per_query:
        for pair in pair_list:
            result[pair.modality].append(pair)
    return result


def build_labeled_pairs(
    queries: QuerySet, store: EmbeddingStore, qrels: Qrels, threads: int = 1
) -> dict[Modality, list[PseudoPair]]:
    """Query-positive pairs from qrels, grouped by the positive's modality.

    Queries absent from the qrels contribute nothing. Scores go through the
    same batched kernel as pseudo pairs, so identical (query, item) pairs get
    bit-identical scores under both estimators.
    """
    qrels.validate_against(store)
    row_of = {
        m: {item_id: i for i, item_id in enumerate(store.view(m).ids)} for m in MODALITIES
    }

    def pairs_for(query: QueryRecord) -> list[PseudoPair]:
        if query.id not in qrels:
            return []
        out = []
        for item_id in sorted(qrels[query.id]):
            modality = store.get(item_id).modality
            scores = all_scores(query, store.view(modality))
            out.append(
                PseudoPair(query.id, item_id, modality,
                           float(scores[row_of[modality][item_id]]))
            )
        return out

    per_query = parallel_map(pairs_for, list(queries), threads=threads)
    result: dict[Modality, list[PseudoPair]] = {m: [] for m in MODALITIES}
    for pair_list in per_query:
        for pair in pair_list:
            result[pair.modality].append(pair)
    return result


def estimate_stats(
    pairs: Mapping[Modality, Sequence[PseudoPair]],
    source: str,
    store_fingerprint: str = "",
    ddof: int = 0,
) -> StatsBundle:
    """Per-modality mean and variance of pair scores.

    The variance divisor is N (population) by default; ``ddof=1`` switches
    to N-1 for callers that want the sample estimator. Sums use exact
    float summation, so results do not depend on pair order.
    """
    per: dict[Modality, ModalityStats] = {}
    for m in MODALITIES:
        plist = sorted(pairs.get(m, ()), key=lambda p: (p.query_id, p.item_id))
        n = len(plist)
        if n < 2:
            raise TooFewPairs(f"{m.value}: need at least 2 pairs, got {n}")
        scores = [p.score for p in plist]
        mean = math.fsum(scores) / n
        variance = math.fsum((s - mean) ** 2 for s in scores) / (n - ddof)
        std = math.sqrt(variance)
        if std < STD_FLOOR:
            raise DegenerateStats(
                f"{m.value}: score spread {std!r} is below the {STD_FLOOR} floor"
            )
        per[m] = ModalityStats(mean=mean, std=std, variance=variance, count=n)
    return StatsBundle(per_modality=per, source=source, store_fingerprint=store_fingerprint)


def standardize(raw_cos: float, stats: StatsBundle, modality: Modality) -> float:
    """(raw - mean_m) / std_m."""
    s = stats.for_modality(modality)
    return (raw_cos - s.mean) / s.std


def standardize_array(scores: np.ndarray, stats: StatsBundle, modality: Modality) -> np.ndarray:
    """Vectorized :func:`standardize` over a float64 score array."""
    s = stats.for_modality(modality)
    return (scores - s.mean) / s.std


def retrieve(
    query: QueryRecord | np.ndarray,
    store: EmbeddingStore,
    k: int,
    method: str = "cos",
    stats: StatsBundle | None = None,
) -> list[ScoredCandidate]:
    """Rank the whole store for one query by raw or standardized cosine.

    Implemented as per-modality top-k followed by a merge; because
    standardization is strictly increasing within a modality this equals
    the "score everything, globally stable-sort, truncate" oracle. Exact
    score ties order text before image, then ascending id.
    """
    if method not in ("cos", "std"):
        raise ValueError(f"method must be 'cos' or 'std', got {method!r}")
    if k < 0:
        raise ValueError("k must be non-negative")
    if len(store) == 0:
        raise EmptyStore("cannot retrieve from an empty store")
    if method == "std" and stats is None:
        raise MissingStats("method 'std' requires a stats bundle")
    if k == 0:
        return []

    ids: list[str] = []
    mods: list[Modality] = []
    raw_parts: list[np.ndarray] = []
    key_parts: list[np.ndarray] = []
    for m in MODALITIES:  # text block first: stable merge keeps text before image on ties
        view = store.view(m)
        if len(view) == 0:
            continue
        raw = all_scores(query, view)
        key = standardize_array(raw, stats, m) if method == "std" else raw
        picks = top_k_indices(key, min(k, len(view)))
        ids.extend(view.ids[i] for i in picks)
        mods.extend([m] * len(picks))
        raw_parts.append(raw[picks])
        key_parts.append(key[picks])

    raw_all = np.concatenate(raw_parts)
    key_all = np.concatenate(key_parts)
    order = np.argsort(-key_all, kind="stable")[:k]
    if method == "std":
        return [
            ScoredCandidate(ids[i], mods[i], raw_cos=float(raw_all[i]),
                            std_score=float(key_all[i]))
            for i in order
        ]
    return [
        ScoredCandidate(ids[i], mods[i], raw_cos=float(raw_all[i])) for i in order
    ]


# --- artifact files -----------------------------------------------------------

def write_pairs(
    path: Path | str,
    pairs: Mapping[Modality, Sequence[PseudoPair]],
    config: Mapping[str, Any] | None = None,
) -> None:
    """Pairs JSONL: a header line with the config, then one row per pair."""
    rows = sorted(
        (p for plist in pairs.values() for p in plist),
        key=lambda p: (p.query_id, p.modality.merge_rank, p.item_id),
    )
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json_line({"format": PAIRS_FORMAT, "config": dict(config or {})}))
        for p in rows:
            fh.write(
                json_line(
                    {
                        "query_id": p.query_id,
                        "item_id": p.item_id,
                        "modality": p.modality.value,
                        "score": p.score,
                    }
                )
            )


def load_pairs(
    path: Path | str, store: EmbeddingStore | None = None
) -> tuple[dict[Modality, list[PseudoPair]], dict[str, Any]]:
    """Read a pairs file; returns (pairs by modality, header config).

    The header line is optional so hand-built fixture files stay valid.
    With a store, item ids must exist and carry the row's modality.
    """
    path = Path(path)
    result: dict[Modality, list[PseudoPair]] = {m: [] for m in MODALITIES}
    header_config: dict[str, Any] = {}
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidArtifact(f"{path} line {line_no}: {exc}") from exc
            if line_no == 0 and isinstance(row, dict) and row.get("format") == PAIRS_FORMAT:
                header_config = row.get("config") or {}
                continue
            try:
                pair = PseudoPair(
                    query_id=row["query_id"],
                    item_id=row["item_id"],
                    modality=Modality(row["modality"]),
                    score=float(row["score"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise InvalidArtifact(f"{path} line {line_no}: {exc!r}") from exc
            if store is not None:
                if pair.item_id not in store:
                    raise InvalidArtifact(
                        f"{path} line {line_no}: unknown item {pair.item_id!r}"
                    )
                if store.get(pair.item_id).modality is not pair.modality:
                    raise InvalidArtifact(
                        f"{path} line {line_no}: item {pair.item_id!r} is not "
                        f"{pair.modality.value}"
                    )
            result[pair.modality].append(pair)
    for m in MODALITIES:
        result[m].sort(key=lambda p: (p.query_id, p.item_id))
    return result, header_config


def write_stats(
    path: Path | str, bundle: StatsBundle, config: Mapping[str, Any] | None = None
) -> None:
    obj: dict[str, Any] = {
        "format": STATS_FORMAT,
        "source": bundle.source,
        "store_fingerprint": bundle.store_fingerprint,
    }
    for m in MODALITIES:
        s = bundle.for_modality(m)
        obj[m.value] = {
            "mean": s.mean,
            "std": s.std,
            "variance": s.variance,
            "count": s.count,
        }
    if config is not None:
        obj["config"] = dict(config)
    write_json(Path(path), obj)


def load_stats(path: Path | str) -> StatsBundle:
    path = Path(path)
    obj = read_json(path)
    if not isinstance(obj, dict) or obj.get("format") != STATS_FORMAT:
        raise InvalidArtifact(f"{path}: not a {STATS_FORMAT} file")
    per: dict[Modality, ModalityStats] = {}
    for m in MODALITIES:
        block = obj.get(m.value)
        if not isinstance(block, dict):
            raise InvalidArtifact(f"{path}: missing {m.value} block")
        try:
            per[m] = ModalityStats(
                mean=float(block["mean"]),
                std=float(block["std"]),
                variance=float(block["variance"]),
                count=int(block["count"]),
            )
        except KeyError as exc:
            raise InvalidArtifact(f"{path}: {m.value} block lacks {exc}") from exc
    return StatsBundle(
        per_modality=per,
        source=obj.get("source", ""),
        store_fingerprint=obj.get("store_fingerprint", ""),
    )


def stats_config(path: Path | str) -> dict[str, Any]:
    """The config block embedded in a stats file ({} if absent)."""
    obj = read_json(Path(path))
    cfg = obj.get("config") if isinstance(obj, dict) else None
    return cfg if isinstance(cfg, dict) else {}
