"""Calibrated multi-modal dense retrieval.

Mixed text/image corpora score same-modality candidates systematically
higher under raw cosine. This package estimates per-modality score
statistics from pseudo-positive pairs (each query's top-1 item per
modality) and ranks by the standardized score instead, plus the exact
search engine, evaluation metrics, and diagnostics needed to verify the
behavior end to end.
"""
from .analysis import (
    Histogram,
    Projection2D,
    ProjectionLabel,
    ScoreGapSample,
    histogram,
    mean_score_gap,
    query_skewness,
    skewness,
    svd_project,
)
from .calibration import (
    ModalityStats,
    PseudoPair,
    StatsBundle,
    build_labeled_pairs,
    build_pseudo_pairs,
    estimate_stats,
    load_pairs,
    load_stats,
    retrieve,
    standardize,
    standardize_array,
    write_pairs,
    write_stats,
)
from .evaluation import (
    MetricReport,
    RankedRun,
    evaluate_run,
    load_run,
    mrr_at_k,
    ndcg_at_k,
    recall_at_k,
    write_run,
)
from .similarity import ScoredCandidate, all_scores, cosine, top_k, top_k_indices
from .store import (
    EmbeddingStore,
    ItemRecord,
    Modality,
    ModalityView,
    QType,
    Qrels,
    QueryRecord,
    QuerySet,
    ingest,
    ingest_queries,
    load_qrels,
    load_queries,
    load_store,
    modality_view,
    write_qrels,
)
from .synth import SynthConfig, generate, write_synth

__version__ = "0.1.0"
