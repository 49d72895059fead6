"""Shared plumbing: deterministic JSON serialization, hashing, ordered parallel map."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def json_line(obj: dict[str, Any]) -> str:
    """One JSONL record. Insertion key order, so output bytes are reproducible."""
    return json.dumps(obj, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: Path, obj: dict[str, Any]) -> None:
    """Pretty, reproducible JSON file (insertion key order, trailing newline)."""
    path.write_text(
        json.dumps(obj, ensure_ascii=False, allow_nan=False, indent=2) + "\n",
        encoding="utf-8",
    )


def read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def read_jsonl(path: Path) -> list[Any]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def parallel_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T], threads: int = 1) -> list[R]:
    """Map preserving input order. ``threads <= 1`` runs inline.

    Results must not depend on the worker count, so ``fn`` has to be pure;
    every caller in this package maps over independent queries.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
