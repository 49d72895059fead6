"""Diagnostics for the modality gap: skewness of similarity distributions,
standardized score-gap histograms, and 2-D SVD projections of embeddings.

These reproduce the numbers behind the method's
why-does-standardization-work story: image-score distributions are
positively skewed (outliers often are the relevant images, and
standardization amplifies them), and the per-query gap between mean
standardized image and text scores shows how much of the modality offset
remains after calibration.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ._util import write_json
from .calibration import StatsBundle, standardize_array
from .errors import (
    BadRange,
    ConstantInput,
    DegenerateInput,
    DimMismatch,
    EmptyModality,
    TooFewSamples,
)
from .similarity import all_scores
from .store import MODALITIES, EmbeddingStore, Modality, Qrels, QueryRecord, QuerySet

SKEW_FORMAT = "mbskew-v1"
GAP_FORMAT = "mbgap-v1"
PROJECTION_FORMAT = "mbproj-v1"

PROJECTION_ROLES = ("query", "positive_text", "positive_image")

GAP_HIST_BINS = 60
GAP_HIST_RANGE = (-6.0, 6.0)


@dataclass(frozen=True)
class ScoreGapSample:
    """Mean standardized image score minus mean standardized text score."""

    query_id: str
    gap: float


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray    # bins + 1 boundaries
    counts: np.ndarray   # per-bin counts
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


@dataclass(frozen=True)
class ProjectionLabel:
    id: str
    role: str

    def __post_init__(self) -> None:
        if self.role not in PROJECTION_ROLES:
            raise ValueError(f"unknown projection role {self.role!r}")


@dataclass(frozen=True)
class Projection2D:
    labels: list[ProjectionLabel]
    coords: np.ndarray  # (n, 2)

    def __post_init__(self) -> None:
        if self.coords.shape != (len(self.labels), 2):
            raise DimMismatch(
                f"{len(self.labels)} labels but coords shape {self.coords.shape}"
            )


def skewness(values: Sequence[float] | np.ndarray) -> float:
    """Moment skewness g1 = m3 / m2^(3/2) with population moments."""
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.shape[0]
    if n < 3:
        raise TooFewSamples(f"skewness needs at least 3 values, got {n}")
    if np.all(x == x[0]):
        raise ConstantInput("skewness of a constant sample is undefined")
    mean = math.fsum(x) / n
    centered = x - mean
    m2 = math.fsum(centered * centered) / n
    m3 = math.fsum(centered * centered * centered) / n
    if m2 == 0.0:
        raise ConstantInput("zero second moment")
    return m3 / m2**1.5


def query_skewness(query: QueryRecord, store: EmbeddingStore) -> dict[Modality, float]:
    """Skewness of the query's raw cosine distribution over each modality view."""
    out = {}
    for m in MODALITIES:
        view = store.view(m)
        if len(view) < 3:
            raise TooFewSamples(f"{m.value} view has {len(view)} items; need 3")
        out[m] = skewness(all_scores(query, view))
    return out


def mean_score_gap(
    query: QueryRecord, store: EmbeddingStore, stats: StatsBundle
) -> ScoreGapSample:
    """Image-minus-text difference of mean standardized scores, over the full
    candidate set of each modality."""
    means = {}
    for m in MODALITIES:
        view = store.view(m)
        if len(view) == 0:
            raise EmptyModality(f"store has no {m.value} items")
        std_scores = standardize_array(all_scores(query, view), stats, m)
        means[m] = math.fsum(std_scores) / len(view)
    return ScoreGapSample(
        query_id=query.id, gap=means[Modality.IMAGE] - means[Modality.TEXT]
    )


def histogram(
    values: Sequence[float] | np.ndarray,
    bins: int,
    value_range: tuple[float, float],
) -> Histogram:
    """Equal-width counts over [lo, hi] plus two out-of-range buckets.

    Bins are half-open [edge_i, edge_{i+1}) — a value exactly on an interior
    edge lands in the right bin — except the last bin, which also includes hi.
    """
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < 1:
        raise BadRange(f"bins must be >= 1, got {bins}")
    if not lo < hi:
        raise BadRange(f"empty range [{lo}, {hi}]")
    x = np.asarray(values, dtype=np.float64).ravel()
    edges = np.linspace(lo, hi, bins + 1)
    underflow = int(np.count_nonzero(x < lo))
    overflow = int(np.count_nonzero(x > hi))
    inside = x[(x >= lo) & (x <= hi)]
    idx = np.searchsorted(edges, inside, side="right") - 1
    idx[idx == bins] = bins - 1  # hi belongs to the last bin
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    return Histogram(edges=edges, counts=counts, underflow=underflow, overflow=overflow)


def svd_project(
    matrix: np.ndarray, labels: Sequence[ProjectionLabel]
) -> Projection2D:
    """Mean-center rows and project onto the top-2 right singular vectors.

    Each singular vector is oriented so its largest-magnitude component is
    positive, making the output reproducible across SVD implementations.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInput(f"projection needs an (n>=2, d) matrix, got {x.shape}")
    if x.shape[1] < 2:
        raise DegenerateInput(f"projection needs at least 2 columns, got {x.shape[1]}")
    if len(labels) != x.shape[0]:
        raise DimMismatch(f"{len(labels)} labels for {x.shape[0]} rows")
    centered = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    for j in range(2):
        pivot = int(np.argmax(np.abs(vt[j])))
        if vt[j, pivot] < 0:
            u[:, j] = -u[:, j]
    coords = u[:, :2] * s[:2]
    return Projection2D(labels=list(labels), coords=coords)


def collect_projection_rows(
    queries: QuerySet,
    store: EmbeddingStore,
    qrels: Qrels,
    qtype: str | None = None,
) -> tuple[np.ndarray, list[ProjectionLabel]]:
    """Stack query embeddings and their gold positives for projection.

    Rows are the selected queries (ascending id) followed by the distinct
    positives they reference (ascending id), labeled by role.
    """
    selected = [
        q for q in queries
        if qtype is None or (q.qtype is not None and q.qtype.value == qtype)
    ]
    if not selected:
        raise DegenerateInput(f"no queries match qtype {qtype!r}")
    positive_ids = sorted(
        {pid for q in selected if q.id in qrels for pid in qrels[q.id]}
    )
    rows = [q.vector for q in selected]
    labels = [ProjectionLabel(q.id, "query") for q in selected]
    for pid in positive_ids:
        record = store.get(pid)
        rows.append(record.vector)
        labels.append(
            ProjectionLabel(
                pid,
                "positive_text" if record.modality is Modality.TEXT else "positive_image",
            )
        )
    return np.vstack(rows), labels


# --- artifact writers -----------------------------------------------------------

def write_skewness_report(
    path: Path | str,
    per_query: Mapping[str, Mapping[Modality, float]],
    config: Mapping[str, Any] | None = None,
    emit_csv: bool = False,
) -> None:
    """Per-query skewness plus per-modality means across queries."""
    path = Path(path)
    qids = sorted(per_query)
    obj: dict[str, Any] = {
        "format": SKEW_FORMAT,
        "per_query": {
            qid: {m.value: per_query[qid][m] for m in MODALITIES} for qid in qids
        },
        "mean": {
            m.value: (
                math.fsum(per_query[qid][m] for qid in qids) / len(qids) if qids else None
            )
            for m in MODALITIES
        },
        "count": len(qids),
    }
    if config is not None:
        obj["config"] = dict(config)
    write_json(path, obj)
    if emit_csv:
        with path.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "text", "image"])
            for qid in qids:
                writer.writerow(
                    [qid, repr(per_query[qid][Modality.TEXT]), repr(per_query[qid][Modality.IMAGE])]
                )


def write_gap_report(
    path: Path | str,
    hist: Histogram,
    gaps: Sequence[ScoreGapSample],
    config: Mapping[str, Any] | None = None,
    emit_csv: bool = False,
) -> None:
    """Score-gap histogram (edges + counts); CSV adds the per-query gaps."""
    path = Path(path)
    obj: dict[str, Any] = {
        "format": GAP_FORMAT,
        "edges": [float(e) for e in hist.edges],
        "counts": [int(c) for c in hist.counts],
        "underflow": hist.underflow,
        "overflow": hist.overflow,
        "count": hist.total,
    }
    if config is not None:
        obj["config"] = dict(config)
    write_json(path, obj)
    if emit_csv:
        with path.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for i in range(len(hist.counts)):
                writer.writerow(
                    [repr(float(hist.edges[i])), repr(float(hist.edges[i + 1])), int(hist.counts[i])]
                )
        gaps_path = path.with_name(path.stem + "_values.csv")
        with gaps_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "gap"])
            for sample in sorted(gaps, key=lambda g: g.query_id):
                writer.writerow([sample.query_id, repr(sample.gap)])


def write_projection(
    path: Path | str,
    projection: Projection2D,
    config: Mapping[str, Any] | None = None,
    emit_csv: bool = False,
) -> None:
    path = Path(path)
    obj: dict[str, Any] = {
        "format": PROJECTION_FORMAT,
        "labels": [{"id": lab.id, "role": lab.role} for lab in projection.labels],
        "coords": [[float(a), float(b)] for a, b in projection.coords],
    }
    if config is not None:
        obj["config"] = dict(config)
    write_json(path, obj)
    if emit_csv:
        with path.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "role", "x", "y"])
            for lab, (a, b) in zip(projection.labels, projection.coords):
                writer.writerow([lab.id, lab.role, repr(float(a)), repr(float(b))])
