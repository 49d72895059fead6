"""Recall@k, MRR@k and NDCG@k over ranked runs, grouped by question type.

All metrics are reported on a 0-100 scale. Recall defaults to the
positive-fraction reading (|hits| / |positives|); ``recall_mode="any-hit"``
scores 100 as soon as one positive is retrieved. NDCG uses binary gains
with a log2(rank+1) discount, 1-based ranks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ._util import json_line
from .errors import EmptyPositives, InvalidArtifact, MissingQrels
from .similarity import ScoredCandidate
from .store import Modality, Qrels

RUN_FORMAT = "mbrun-v1"
REPORT_FORMAT = "mbreport-v1"

GROUP_ORDER = ("TextQ", "ImageQ", "unknown")
METRICS = ("recall", "mrr", "ndcg")


@dataclass(frozen=True)
class RankedRun:
    """Per-query ranked candidate lists produced by one retrieval method."""

    method: str
    k: int
    per_query: Mapping[str, Sequence[ScoredCandidate]]


@dataclass(frozen=True)
class MetricReport:
    """Per-query metrics and per-group means for one run at one cutoff."""

    k: int
    recall_mode: str
    per_query: Mapping[str, Mapping[str, float]]
    aggregates: Mapping[str, Mapping[str, float]]
    counts: Mapping[str, int]


def _ranked_ids(ranked: Sequence[ScoredCandidate] | Sequence[str]) -> list[str]:
    return [c.item_id if isinstance(c, ScoredCandidate) else c for c in ranked]


def _check(positives: Iterable[str], k: int) -> frozenset[str]:
    pos = frozenset(positives)
    if not pos:
        raise EmptyPositives("metrics need at least one positive id")
    if k < 1:
        raise ValueError("k must be a positive integer")
    return pos


def recall_at_k(
    ranked: Sequence[ScoredCandidate] | Sequence[str],
    positives: Iterable[str],
    k: int,
    mode: str = "fraction",
) -> float:
    """100 * |top-k intersect positives| / |positives| (or any-hit 0/100)."""
    pos = _check(positives, k)
    hits = len(pos.intersection(_ranked_ids(ranked)[:k]))
    if mode == "any-hit":
        return 100.0 if hits else 0.0
    if mode != "fraction":
        raise ValueError(f"unknown recall mode {mode!r}")
    return 100.0 * hits / len(pos)


def mrr_at_k(
    ranked: Sequence[ScoredCandidate] | Sequence[str],
    positives: Iterable[str],
    k: int,
) -> float:
    """100 / rank of the first positive within the top k, else 0."""
    pos = _check(positives, k)
    for rank, item_id in enumerate(_ranked_ids(ranked)[:k], start=1):
        if item_id in pos:
            return 100.0 / rank
    return 0.0


def ndcg_at_k(
    ranked: Sequence[ScoredCandidate] | Sequence[str],
    positives: Iterable[str],
    k: int,
) -> float:
    """Binary-gain DCG over the top k, normalized by the ideal ranking."""
    pos = _check(positives, k)
    dcg = math.fsum(
        1.0 / math.log2(rank + 1)
        for rank, item_id in enumerate(_ranked_ids(ranked)[:k], start=1)
        if item_id in pos
    )
    idcg = math.fsum(1.0 / math.log2(rank + 1) for rank in range(1, min(len(pos), k) + 1))
    return 100.0 * dcg / idcg


def evaluate_run(
    run: RankedRun,
    qrels: Qrels,
    qtypes: Mapping[str, str] | None = None,
    k: int | None = None,
    recall_mode: str = "fraction",
) -> MetricReport:
    """Score every query, then average per question type and overall.

    Queries without a declared qtype land in group ``"unknown"`` but still
    count toward the overall mean. Ordering is ascending query id.
    """
    cutoff = run.k if k is None else k
    if cutoff > run.k:
        raise InvalidArtifact(
            f"run holds top-{run.k} lists; cannot evaluate at k={cutoff}"
        )
    qtypes = qtypes or {}
    per_query: dict[str, dict[str, float]] = {}
    grouped: dict[str, list[dict[str, float]]] = {}
    for qid in sorted(run.per_query):
        if qid not in qrels:
            raise MissingQrels(f"no qrels entry for query {qid!r}")
        positives = qrels[qid]
        ranked = run.per_query[qid]
        values = {
            "recall": recall_at_k(ranked, positives, cutoff, mode=recall_mode),
            "mrr": mrr_at_k(ranked, positives, cutoff),
            "ndcg": ndcg_at_k(ranked, positives, cutoff),
        }
        per_query[qid] = values
        grouped.setdefault(qtypes.get(qid, "unknown"), []).append(values)

    aggregates: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for group in GROUP_ORDER:
        rows = grouped.get(group)
        if rows:
            aggregates[group] = {
                m: math.fsum(r[m] for r in rows) / len(rows) for m in METRICS
            }
            counts[group] = len(rows)
    if per_query:
        rows = list(per_query.values())
        aggregates["overall"] = {
            m: math.fsum(r[m] for r in rows) / len(rows) for m in METRICS
        }
        counts["overall"] = len(rows)
    return MetricReport(
        k=cutoff,
        recall_mode=recall_mode,
        per_query=per_query,
        aggregates=aggregates,
        counts=counts,
    )


# --- run files -----------------------------------------------------------------

def write_run(path: Path | str, run: RankedRun, config: Mapping[str, Any] | None = None) -> None:
    """Run JSONL: header line with the config, then one row per query."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json_line({"format": RUN_FORMAT, "config": dict(config or {})}))
        for qid in sorted(run.per_query):
            fh.write(
                json_line(
                    {
                        "query_id": qid,
                        "ranking": [
                            {
                                "item_id": c.item_id,
                                "modality": c.modality.value,
                                "raw_cos": c.raw_cos,
                                "std_score": c.std_score,
                            }
                            for c in run.per_query[qid]
                        ],
                        "method": run.method,
                        "k": run.k,
                    }
                )
            )


def load_run(path: Path | str) -> tuple[RankedRun, dict[str, Any]]:
    """Read a run file; returns (run, header config). Header is optional."""
    path = Path(path)
    method: str | None = None
    k: int | None = None
    per_query: dict[str, list[ScoredCandidate]] = {}
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
            if line_no == 0 and isinstance(row, dict) and row.get("format") == RUN_FORMAT:
                header_config = row.get("config") or {}
                continue
            try:
                qid = row["query_id"]
                row_method = row["method"]
                row_k = int(row["k"])
                ranking = [
                    ScoredCandidate(
                        item_id=entry["item_id"],
                        modality=Modality(entry["modality"]),
                        raw_cos=float(entry["raw_cos"]),
                        std_score=(
                            None if entry.get("std_score") is None
                            else float(entry["std_score"])
                        ),
                    )
                    for entry in row["ranking"]
                ]
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidArtifact(f"{path} line {line_no}: {exc!r}") from exc
            if method is None:
                method, k = row_method, row_k
            elif method != row_method or k != row_k:
                raise InvalidArtifact(
                    f"{path} line {line_no}: method/k differ across rows"
                )
            if qid in per_query:
                raise InvalidArtifact(f"{path} line {line_no}: duplicate query {qid!r}")
            if len(ranking) > row_k:
                raise InvalidArtifact(
                    f"{path} line {line_no}: ranking longer than k={row_k}"
                )
            per_query[qid] = ranking
    if method is None or k is None:
        raise InvalidArtifact(f"{path}: no run rows found")
    return RankedRun(method=method, k=k, per_query=per_query), header_config


# --- reports --------------------------------------------------------------------

def report_to_json(
    runs: Mapping[str, Mapping[int, MetricReport]],
    run_files: Mapping[str, str],
    recall_mode: str,
    config: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Assemble the report object: one block per method, sub-blocks per k."""
    ks = sorted({k for by_k in runs.values() for k in by_k})
    obj: dict[str, Any] = {
        "format": REPORT_FORMAT,
        "recall_mode": recall_mode,
        "ks": ks,
        "runs": {},
    }
    for method, by_k in runs.items():
        obj["runs"][method] = {
            "run_file": run_files.get(method, ""),
            "by_k": {
                str(k): {
                    "aggregates": {g: dict(v) for g, v in rep.aggregates.items()},
                    "counts": dict(rep.counts),
                    "per_query": {q: dict(v) for q, v in rep.per_query.items()},
                }
                for k, rep in sorted(by_k.items())
            },
        }
    if config is not None:
        obj["config"] = dict(config)
    return obj


def format_report_table(
    runs: Mapping[str, Mapping[int, MetricReport]], k: int
) -> str:
    """Plain-text summary at one cutoff: method x group rows, metric columns."""
    header = (
        f"{'method':<8}{'group':<10}{'queries':>8}"
        f"{f'Recall@{k}':>12}{f'MRR@{k}':>12}{f'NDCG@{k}':>12}"
    )
    lines = [header, "-" * len(header)]
    for method, by_k in runs.items():
        rep = by_k.get(k)
        if rep is None:
            continue
        for group in (*GROUP_ORDER, "overall"):
            agg = rep.aggregates.get(group)
            if agg is None:
                continue
            lines.append(
                f"{method:<8}{group:<10}{rep.counts[group]:>8}"
                f"{agg['recall']:>12.2f}{agg['mrr']:>12.2f}{agg['ndcg']:>12.2f}"
            )
    return "\n".join(lines) + "\n"
