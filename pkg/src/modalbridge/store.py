"""Immutable multi-modal embedding database and its on-disk format.

A store directory (``mbstore-v1``) holds:

* ``manifest.json``  — ``{"format", "dim", "count", "normalized", "sha256_vectors"}``
* ``meta.jsonl``     — one object per item, ascending id:
  ``{"id", "modality", "text", "uri"}``
* ``vectors.f32le``  — row-major float32 little-endian block, row order
  identical to ``meta.jsonl``

Query sets reuse the same layout with ``modality`` omitted and an optional
``"qtype": "TextQ"|"ImageQ"`` per row. Qrels are JSONL
``{"query_id", "positive_ids"}``.

Ingestion re-normalizes vectors to unit length (only norms below 1e-12 are
rejected) and sorts by id, so iteration order is ascending lexicographic id
regardless of input order. Stores are immutable once built; the underlying
arrays are marked read-only and can be shared across any number of readers.
"""
from __future__ import annotations

import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from . import kernels
from ._util import json_line, read_json, sha256_hex, write_json
from .errors import (
    CorruptManifest,
    ChecksumMismatch,
    DimMismatch,
    DuplicateId,
    InvalidArtifact,
    NormOutOfTolerance,
    ZeroVector,
)

STORE_FORMAT = "mbstore-v1"
MANIFEST_FILE = "manifest.json"
META_FILE = "meta.jsonl"
VECTORS_FILE = "vectors.f32le"
CONFIG_FILE = "config.json"

NORM_TOLERANCE = 1e-4   # acceptable |norm - 1| for stored vectors
ZERO_NORM = 1e-12       # below this a vector cannot be normalized


class Modality(enum.Enum):
    """The two item modalities. Every item carries exactly one."""

    TEXT = "text"
    IMAGE = "image"

    @property
    def merge_rank(self) -> int:
        """Cross-modality exact-tie order: text before image."""
        return 0 if self is Modality.TEXT else 1


MODALITIES = (Modality.TEXT, Modality.IMAGE)


class QType(enum.Enum):
    """Question type: whether the gold answer is a text passage or an image."""

    TEXT_Q = "TextQ"
    IMAGE_Q = "ImageQ"


@dataclass(frozen=True)
class ItemRecord:
    id: str
    modality: Modality
    vector: np.ndarray  # float32, unit norm
    text: str | None = None
    uri: str | None = None


@dataclass(frozen=True)
class QueryRecord:
    id: str
    vector: np.ndarray  # float32, unit norm
    text: str | None = None
    qtype: QType | None = None


class ModalityView:
    """Ascending-id slice of one modality, with a cached scoring operand."""

    def __init__(self, modality: Modality, ids: list[str], matrix: np.ndarray):
        self.modality = modality
        self.ids = ids
        self.matrix = matrix  # float32 (n, d), read-only
        self._prepared: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def prepared(self) -> np.ndarray:
        """Backend-specific operand for the scoring kernel, built lazily."""
        if self._prepared is None:
            self._prepared = kernels.prepare_matrix(self.matrix)
        return self._prepared


class EmbeddingStore:
    """Immutable collection of unit-norm vectors partitioned by modality."""

    def __init__(
        self,
        ids: list[str],
        modalities: list[Modality],
        vectors: np.ndarray,
        texts: list[str | None],
        uris: list[str | None],
        fingerprint: str,
    ):
        self.ids = ids
        self.modalities = modalities
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.texts = texts
        self.uris = uris
        self.fingerprint = fingerprint
        self._index = {item_id: i for i, item_id in enumerate(ids)}
        self._views: dict[Modality, ModalityView] = {}
        for m in MODALITIES:
            rows = [i for i, mod in enumerate(modalities) if mod is m]
            sub = np.ascontiguousarray(vectors[rows]) if rows else np.empty(
                (0, self.dim), dtype=np.float32
            )
            sub.setflags(write=False)
            self._views[m] = ModalityView(m, [ids[i] for i in rows], sub)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[ItemRecord]:
        for i in range(len(self.ids)):
            yield self.item(i)

    def item(self, i: int) -> ItemRecord:
        return ItemRecord(
            id=self.ids[i],
            modality=self.modalities[i],
            vector=self.vectors[i],
            text=self.texts[i],
            uri=self.uris[i],
        )

    def get(self, item_id: str) -> ItemRecord:
        return self.item(self._index[item_id])

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def view(self, modality: Modality) -> ModalityView:
        """Items of one modality in ascending-id order.

        The two views are disjoint and together cover the store exactly.
        An empty view is legal here; operations that need candidates reject it.
        """
        return self._views[modality]

    @property
    def modality_index(self) -> dict[Modality, list[str]]:
        return {m: list(self._views[m].ids) for m in MODALITIES}

    @classmethod
    def from_records(
        cls, records: Iterable[Mapping[str, Any]], vectors: np.ndarray
    ) -> "EmbeddingStore":
        """Build an in-memory store from metadata rows and raw vectors.

        Rows are ``{"id", "modality", "text"?, "uri"?}``; vectors are any
        real dtype and get re-normalized. The fingerprint matches what an
        ingested-then-loaded copy of the same data would carry.
        """
        rows = [_parse_item_meta(r, i) for i, r in enumerate(records)]
        order, matrix = _prepare_vectors([r["id"] for r in rows], vectors)
        rows = [rows[i] for i in order]
        meta_bytes = _serialize_item_meta(rows)
        fingerprint = _fingerprint(matrix.tobytes(), meta_bytes)
        return cls(
            ids=[r["id"] for r in rows],
            modalities=[Modality(r["modality"]) for r in rows],
            vectors=matrix,
            texts=[r["text"] for r in rows],
            uris=[r["uri"] for r in rows],
            fingerprint=fingerprint,
        )


class QuerySet:
    """Query records in ascending-id order, all sharing one dimension."""

    def __init__(
        self,
        ids: list[str],
        vectors: np.ndarray,
        texts: list[str | None],
        uris: list[str | None],
        qtypes: list[QType | None],
    ):
        self.ids = ids
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.texts = texts
        self.uris = uris
        self.qtypes = qtypes

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[QueryRecord]:
        for i in range(len(self.ids)):
            yield self.query(i)

    def query(self, i: int) -> QueryRecord:
        return QueryRecord(
            id=self.ids[i], vector=self.vectors[i], text=self.texts[i], qtype=self.qtypes[i]
        )

    def qtype_map(self) -> dict[str, str]:
        """query id -> qtype value, for queries that declare one."""
        return {
            qid: qt.value for qid, qt in zip(self.ids, self.qtypes) if qt is not None
        }

    @classmethod
    def from_records(
        cls, records: Iterable[Mapping[str, Any]], vectors: np.ndarray
    ) -> "QuerySet":
        rows = [_parse_query_meta(r, i) for i, r in enumerate(records)]
        order, matrix = _prepare_vectors([r["id"] for r in rows], vectors)
        rows = [rows[i] for i in order]
        return cls(
            ids=[r["id"] for r in rows],
            vectors=matrix,
            texts=[r["text"] for r in rows],
            uris=[r["uri"] for r in rows],
            qtypes=[QType(r["qtype"]) if r["qtype"] is not None else None for r in rows],
        )


@dataclass(frozen=True)
class Qrels:
    """query id -> non-empty set of positive item ids."""

    entries: dict[str, frozenset[str]] = field(default_factory=dict)

    def __contains__(self, query_id: str) -> bool:
        return query_id in self.entries

    def __getitem__(self, query_id: str) -> frozenset[str]:
        return self.entries[query_id]

    def __len__(self) -> int:
        return len(self.entries)

    def validate_against(self, store: EmbeddingStore) -> None:
        """Every referenced item id must exist in the store."""
        for qid, positives in self.entries.items():
            for item_id in positives:
                if item_id not in store:
                    raise InvalidArtifact(
                        f"qrels for query {qid!r} reference unknown item {item_id!r}"
                    )


# --- normalization & serialization ------------------------------------------

def _prepare_vectors(ids: list[str], vectors: np.ndarray) -> tuple[list[int], np.ndarray]:
    """Sort by id, re-normalize in float64, return (permutation, float32 matrix)."""
    matrix = np.asarray(vectors, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimMismatch(f"vector block must be 2-D, got shape {matrix.shape}")
    if matrix.shape[1] < 1:
        raise DimMismatch("dimension must be at least 1")
    if matrix.shape[0] != len(ids):
        raise DimMismatch(
            f"{len(ids)} metadata rows but {matrix.shape[0]} vector rows"
        )
    seen: set[str] = set()
    for item_id in ids:
        if item_id in seen:
            raise DuplicateId(f"duplicate id {item_id!r}")
        seen.add(item_id)
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    matrix = matrix[order]
    norms = np.linalg.norm(matrix, axis=1)
    if matrix.shape[0]:
        bad = int(np.argmin(norms))
        if norms[bad] < ZERO_NORM:
            raise ZeroVector(f"vector for id {ids[order[bad]]!r} has near-zero norm")
        matrix = matrix / norms[:, None]
    out = np.ascontiguousarray(matrix, dtype=np.float32)
    out.setflags(write=False)
    return order, out


def _parse_item_meta(row: Mapping[str, Any], line_no: int) -> dict[str, Any]:
    item_id = row.get("id")
    if not isinstance(item_id, str) or not item_id:
        raise CorruptManifest(f"meta row {line_no}: id must be a non-empty string")
    modality = row.get("modality")
    if modality not in ("text", "image"):
        raise CorruptManifest(
            f"meta row {line_no} ({item_id!r}): modality must be 'text' or 'image'"
        )
    text = row.get("text")
    uri = row.get("uri")
    if text is not None and not isinstance(text, str):
        raise CorruptManifest(f"meta row {line_no} ({item_id!r}): text must be string or null")
    if uri is not None and not isinstance(uri, str):
        raise CorruptManifest(f"meta row {line_no} ({item_id!r}): uri must be string or null")
    return {"id": item_id, "modality": modality, "text": text, "uri": uri}


def _parse_query_meta(row: Mapping[str, Any], line_no: int) -> dict[str, Any]:
    if "modality" in row:
        raise CorruptManifest(
            f"meta row {line_no}: found item metadata where a query set was expected"
        )
    query_id = row.get("id")
    if not isinstance(query_id, str) or not query_id:
        raise CorruptManifest(f"meta row {line_no}: id must be a non-empty string")
    qtype = row.get("qtype")
    if qtype not in (None, "TextQ", "ImageQ"):
        raise CorruptManifest(
            f"meta row {line_no} ({query_id!r}): qtype must be 'TextQ', 'ImageQ' or absent"
        )
    text = row.get("text")
    uri = row.get("uri")
    if text is not None and not isinstance(text, str):
        raise CorruptManifest(f"meta row {line_no} ({query_id!r}): text must be string or null")
    if uri is not None and not isinstance(uri, str):
        raise CorruptManifest(f"meta row {line_no} ({query_id!r}): uri must be string or null")
    return {"id": query_id, "text": text, "uri": uri, "qtype": qtype}


def _serialize_item_meta(rows: list[dict[str, Any]]) -> bytes:
    buf = io.StringIO()
    for r in rows:
        buf.write(json_line({"id": r["id"], "modality": r["modality"],
                             "text": r["text"], "uri": r["uri"]}))
    return buf.getvalue().encode("utf-8")


def _serialize_query_meta(rows: list[dict[str, Any]]) -> bytes:
    buf = io.StringIO()
    for r in rows:
        obj: dict[str, Any] = {"id": r["id"], "text": r["text"], "uri": r["uri"]}
        if r["qtype"] is not None:
            obj["qtype"] = r["qtype"]
        buf.write(json_line(obj))
    return buf.getvalue().encode("utf-8")


def _fingerprint(vector_bytes: bytes, meta_bytes: bytes) -> str:
    """Store identity: covers both vector content and item metadata."""
    return sha256_hex(
        (sha256_hex(vector_bytes) + ":" + sha256_hex(meta_bytes)).encode("ascii")
    )


def _write_dir(
    out_dir: Path,
    meta_bytes: bytes,
    matrix: np.ndarray,
    config: Mapping[str, Any] | None,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    vector_bytes = matrix.astype("<f4", copy=False).tobytes(order="C")
    manifest = {
        "format": STORE_FORMAT,
        "dim": int(matrix.shape[1]),
        "count": int(matrix.shape[0]),
        "normalized": True,
        "sha256_vectors": sha256_hex(vector_bytes),
    }
    (out_dir / VECTORS_FILE).write_bytes(vector_bytes)
    (out_dir / META_FILE).write_bytes(meta_bytes)
    write_json(out_dir / MANIFEST_FILE, manifest)
    if config is not None:
        write_json(out_dir / CONFIG_FILE, dict(config))


# --- public ingestion / loading ----------------------------------------------

def ingest(
    records: Iterable[Mapping[str, Any]],
    vectors: np.ndarray,
    out_dir: Path | str,
    config: Mapping[str, Any] | None = None,
) -> EmbeddingStore:
    """Validate, normalize, sort and write an item store directory.

    Returns the in-memory store; ``load_store(out_dir)`` reproduces it
    bitwise.
    """
    rows = [_parse_item_meta(r, i) for i, r in enumerate(records)]
    order, matrix = _prepare_vectors([r["id"] for r in rows], vectors)
    rows = [rows[i] for i in order]
    meta_bytes = _serialize_item_meta(rows)
    _write_dir(Path(out_dir), meta_bytes, matrix, config)
    return EmbeddingStore(
        ids=[r["id"] for r in rows],
        modalities=[Modality(r["modality"]) for r in rows],
        vectors=matrix,
        texts=[r["text"] for r in rows],
        uris=[r["uri"] for r in rows],
        fingerprint=_fingerprint(matrix.tobytes(), meta_bytes),
    )


def ingest_queries(
    records: Iterable[Mapping[str, Any]],
    vectors: np.ndarray,
    out_dir: Path | str,
    config: Mapping[str, Any] | None = None,
) -> QuerySet:
    """Same as :func:`ingest` for a query set (no modality, optional qtype)."""
    rows = [_parse_query_meta(r, i) for i, r in enumerate(records)]
    order, matrix = _prepare_vectors([r["id"] for r in rows], vectors)
    rows = [rows[i] for i in order]
    _write_dir(Path(out_dir), _serialize_query_meta(rows), matrix, config)
    return QuerySet(
        ids=[r["id"] for r in rows],
        vectors=matrix,
        texts=[r["text"] for r in rows],
        uris=[r["uri"] for r in rows],
        qtypes=[QType(r["qtype"]) if r["qtype"] is not None else None for r in rows],
    )


def _load_dir(path: Path) -> tuple[dict[str, Any], list[dict[str, Any]], np.ndarray, bytes]:
    """Shared manifest/meta/vector reading and consistency checks."""
    manifest_path = path / MANIFEST_FILE
    if not manifest_path.is_file():
        raise CorruptManifest(f"{manifest_path} is missing")
    try:
        manifest = read_json(manifest_path)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptManifest(f"{manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != STORE_FORMAT:
        raise CorruptManifest(f"{manifest_path}: not a {STORE_FORMAT} manifest")
    dim = manifest.get("dim")
    count = manifest.get("count")
    if not isinstance(dim, int) or dim < 1:
        raise CorruptManifest(f"{manifest_path}: dim must be a positive integer")
    if not isinstance(count, int) or count < 0:
        raise CorruptManifest(f"{manifest_path}: count must be a non-negative integer")
    if manifest.get("normalized") is not True:
        raise CorruptManifest(f"{manifest_path}: only normalized stores are supported")

    meta_path = path / META_FILE
    if not meta_path.is_file():
        raise CorruptManifest(f"{meta_path} is missing")
    meta_bytes = meta_path.read_bytes()
    raw_rows = []
    for line_no, line in enumerate(meta_bytes.decode("utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            raw_rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorruptManifest(f"{meta_path} line {line_no}: {exc}") from exc
    if len(raw_rows) != count:
        raise CorruptManifest(
            f"{meta_path}: {len(raw_rows)} rows but manifest count is {count}"
        )

    vec_path = path / VECTORS_FILE
    if not vec_path.is_file():
        raise CorruptManifest(f"{vec_path} is missing")
    blob = vec_path.read_bytes()
    expected = count * dim * 4
    if len(blob) != expected:
        if count > 0 and len(blob) % (4 * count) == 0 and len(blob) // (4 * count) != dim:
            raise DimMismatch(
                f"{vec_path}: block holds dimension {len(blob) // (4 * count)} "
                f"but manifest says {dim}"
            )
        raise CorruptManifest(
            f"{vec_path}: {len(blob)} bytes, expected {expected} "
            f"(count={count}, dim={dim})"
        )
    if sha256_hex(blob) != manifest.get("sha256_vectors"):
        raise ChecksumMismatch(f"{vec_path}: SHA-256 differs from manifest")

    matrix = np.frombuffer(blob, dtype="<f4").reshape(count, dim).astype(
        np.float32, copy=True
    )
    matrix.setflags(write=False)
    if count:
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        off = np.abs(norms - 1.0)
        worst = int(np.argmax(off))
        if off[worst] > NORM_TOLERANCE:
            raise NormOutOfTolerance(
                f"row {worst}: norm {norms[worst]:.6f} outside 1 +/- {NORM_TOLERANCE}"
            )
    return manifest, raw_rows, matrix, meta_bytes


def _check_ascending(ids: list[str], path: Path) -> None:
    for a, b in zip(ids, ids[1:]):
        if a == b:
            raise DuplicateId(f"{path}: duplicate id {a!r}")
        if a > b:
            raise CorruptManifest(f"{path}: ids not in ascending order ({a!r} > {b!r})")


def load_store(path: Path | str) -> EmbeddingStore:
    """Load and validate an item store directory. Idempotent and read-only."""
    path = Path(path)
    _, raw_rows, matrix, meta_bytes = _load_dir(path)
    rows = [_parse_item_meta(r, i) for i, r in enumerate(raw_rows)]
    _check_ascending([r["id"] for r in rows], path / META_FILE)
    return EmbeddingStore(
        ids=[r["id"] for r in rows],
        modalities=[Modality(r["modality"]) for r in rows],
        vectors=matrix,
        texts=[r["text"] for r in rows],
        uris=[r["uri"] for r in rows],
        fingerprint=_fingerprint(matrix.tobytes(), meta_bytes),
    )


def load_queries(path: Path | str) -> QuerySet:
    """Load and validate a query-set directory."""
    path = Path(path)
    _, raw_rows, matrix, _meta = _load_dir(path)
    rows = [_parse_query_meta(r, i) for i, r in enumerate(raw_rows)]
    _check_ascending([r["id"] for r in rows], path / META_FILE)
    return QuerySet(
        ids=[r["id"] for r in rows],
        vectors=matrix,
        texts=[r["text"] for r in rows],
        uris=[r["uri"] for r in rows],
        qtypes=[QType(r["qtype"]) if r["qtype"] is not None else None for r in rows],
    )


def modality_view(store: EmbeddingStore, modality: Modality) -> ModalityView:
    """Free-function alias for :meth:`EmbeddingStore.view`."""
    return store.view(modality)


def load_qrels(path: Path | str, store: EmbeddingStore | None = None) -> Qrels:
    """Load qrels JSONL; validates positives are non-empty (and exist, if a
    store is given)."""
    path = Path(path)
    entries: dict[str, frozenset[str]] = {}
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidArtifact(f"{path} line {line_no}: {exc}") from exc
            qid = row.get("query_id")
            positives = row.get("positive_ids")
            if not isinstance(qid, str) or not qid:
                raise InvalidArtifact(f"{path} line {line_no}: query_id must be a non-empty string")
            if qid in entries:
                raise InvalidArtifact(f"{path} line {line_no}: duplicate query_id {qid!r}")
            if (
                not isinstance(positives, list)
                or not positives
                or not all(isinstance(p, str) and p for p in positives)
            ):
                raise InvalidArtifact(
                    f"{path} line {line_no}: positive_ids must be a non-empty list of ids"
                )
            entries[qid] = frozenset(positives)
    qrels = Qrels(entries)
    if store is not None:
        qrels.validate_against(store)
    return qrels


def write_qrels(path: Path | str, entries: Mapping[str, Iterable[str]]) -> None:
    """Write qrels JSONL in ascending query-id order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for qid in sorted(entries):
            fh.write(json_line({"query_id": qid, "positive_ids": sorted(entries[qid])}))
