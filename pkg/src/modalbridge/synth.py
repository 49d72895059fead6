"""Deterministic synthetic benchmark with a controllable modality offset.

Geometry: every item owns a unit "topic" vector; its embedding is the topic
plus isotropic noise. All text items (and all queries, which are textual)
additionally receive one shared offset vector of norm ``gap_offset`` before
re-normalization. That reproduces the failure mode the calibration exists
for: with a large offset, a query's cosine against *any* text item is
dominated by the shared offset component, so text distractors outrank even
the query's own gold image. Standardizing per modality removes the shared
shift and the gold items surface again.

With unit-norm topics the raw-cosine ranking flips once ``gap_offset``
exceeds roughly 1.3; the defaults (gap 2.0, noise 0.1) sit safely past it.

Randomness comes from a single Philox 4x64 counter-based stream keyed by
``seed`` (draw order: offset direction, text topics, image topics, text
noise, image noise, then per split: gold indices, query noise). Identical
configs produce byte-identical output directories on the same install;
across implementations the contract is distributional, not bitwise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ._util import write_json
from .errors import BadConfig
from .store import ingest, ingest_queries, write_qrels

MAX_COUNT = 999_999  # ids are zero-padded to six digits


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generator. ``noise`` is the expected L2 magnitude of the
    within-cluster spread; ``gap_offset`` is the norm of the shared text-side
    shift."""

    seed: int = 42
    dim: int = 64
    n_text: int = 2000
    n_image: int = 2000
    n_queries: int = 200
    gap_offset: float = 2.0
    noise: float = 0.1
    n_calib: int | None = None     # defaults to n_queries
    imageq_frac: float = 0.5       # fraction of ImageQ queries per split

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise BadConfig("seed must fit in 64 bits")
        if self.dim < 2:
            raise BadConfig("dim must be at least 2")
        for name in ("n_text", "n_image", "n_queries"):
            value = getattr(self, name)
            if not 1 <= value <= MAX_COUNT:
                raise BadConfig(f"{name} must be in [1, {MAX_COUNT}], got {value}")
        if self.n_calib is not None and not 1 <= self.n_calib <= MAX_COUNT:
            raise BadConfig(f"n_calib must be in [1, {MAX_COUNT}], got {self.n_calib}")
        if not self.noise > 0:
            raise BadConfig(f"noise must be positive, got {self.noise}")
        if not self.gap_offset >= 0:
            raise BadConfig(f"gap_offset must be non-negative, got {self.gap_offset}")
        if not 0.0 <= self.imageq_frac <= 1.0:
            raise BadConfig(f"imageq_frac must be in [0, 1], got {self.imageq_frac}")

    @property
    def calib_count(self) -> int:
        return self.n_queries if self.n_calib is None else self.n_calib

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["n_calib"] = self.calib_count
        return d


@dataclass
class SynthData:
    """In-memory generator output, ready for ingestion."""

    item_records: list[dict[str, Any]]
    item_vectors: np.ndarray
    eval_records: list[dict[str, Any]]
    eval_vectors: np.ndarray
    calib_records: list[dict[str, Any]]
    calib_vectors: np.ndarray
    eval_qrels: dict[str, list[str]]
    calib_qrels: dict[str, list[str]]


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def generate(config: SynthConfig) -> SynthData:
    """Draw the full benchmark. Vectors are raw (unnormalized); ingestion
    normalizes them."""
    config.validate()
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    dim = config.dim
    sigma = config.noise / math.sqrt(dim)

    offset = config.gap_offset * _unit_rows(rng.standard_normal((1, dim)))[0]
    text_topics = _unit_rows(rng.standard_normal((config.n_text, dim)))
    image_topics = _unit_rows(rng.standard_normal((config.n_image, dim)))
    text_vectors = text_topics + sigma * rng.standard_normal((config.n_text, dim)) + offset
    image_vectors = image_topics + sigma * rng.standard_normal((config.n_image, dim))

    item_records = [
        {
            "id": f"t{i + 1:06d}",
            "modality": "text",
            "text": f"synthetic passage t{i + 1:06d}",
            "uri": None,
        }
        for i in range(config.n_text)
    ] + [
        {
            "id": f"i{i + 1:06d}",
            "modality": "image",
            "text": None,
            "uri": f"synthetic://image/i{i + 1:06d}",
        }
        for i in range(config.n_image)
    ]
    item_vectors = np.vstack([text_vectors, image_vectors])

    def make_queries(prefix: str, count: int):
        n_imageq = round(config.imageq_frac * count)
        gold_image = rng.integers(0, config.n_image, size=n_imageq)
        gold_text = rng.integers(0, config.n_text, size=count - n_imageq)
        noise = sigma * rng.standard_normal((count, dim))
        records, vectors, qrels = [], [], {}
        for j in range(count):
            qid = f"{prefix}{j + 1:06d}"
            if j < n_imageq:
                topic = image_topics[gold_image[j]]
                gold_id = f"i{int(gold_image[j]) + 1:06d}"
                qtype = "ImageQ"
            else:
                topic = text_topics[gold_text[j - n_imageq]]
                gold_id = f"t{int(gold_text[j - n_imageq]) + 1:06d}"
                qtype = "TextQ"
            records.append(
                {
                    "id": qid,
                    "text": f"synthetic question {qid}",
                    "uri": None,
                    "qtype": qtype,
                }
            )
            vectors.append(topic + noise[j] + offset)
            qrels[qid] = [gold_id]
        return records, np.vstack(vectors), qrels

    eval_records, eval_vectors, eval_qrels = make_queries("qe", config.n_queries)
    calib_records, calib_vectors, calib_qrels = make_queries("qc", config.calib_count)

    return SynthData(
        item_records=item_records,
        item_vectors=item_vectors,
        eval_records=eval_records,
        eval_vectors=eval_vectors,
        calib_records=calib_records,
        calib_vectors=calib_vectors,
        eval_qrels=eval_qrels,
        calib_qrels=calib_qrels,
    )


def write_synth(config: SynthConfig, out_dir: Path | str) -> dict[str, Path]:
    """Generate and write store, eval/calib query sets, and both qrels files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(config)
    cfg = config.as_dict()
    paths = {
        "store": out / "store",
        "queries_eval": out / "queries_eval",
        "queries_calib": out / "queries_calib",
        "qrels_eval": out / "qrels_eval.jsonl",
        "qrels_calib": out / "qrels_calib.jsonl",
        "config": out / "synth_config.json",
    }
    ingest(data.item_records, data.item_vectors, paths["store"], config=cfg)
    ingest_queries(data.eval_records, data.eval_vectors, paths["queries_eval"], config=cfg)
    ingest_queries(data.calib_records, data.calib_vectors, paths["queries_calib"], config=cfg)
    write_qrels(paths["qrels_eval"], data.eval_qrels)
    write_qrels(paths["qrels_calib"], data.calib_qrels)
    write_json(paths["config"], {"format": "mbsynth-v1", "config": cfg})
    return paths
