"""Batch command-line surface for the retrieval engine.

Subcommands: ``ingest``, ``gen-synth``, ``pseudo-pairs``, ``estimate-stats``,
``retrieve``, ``evaluate``, ``analyze skewness|gap|svd``. Exit codes:
0 success, 1 data/validation error (with ``{"error": code, "message": ...}``
on stderr), 2 usage error.

Every artifact embeds the resolved configuration that produced it, except
execution-only knobs (``--threads``), so reruns and different worker counts
stay byte-identical. An optional TOML file (``--config``) supplies defaults
for optional flags; explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Mapping

import numpy as np

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from . import analysis, calibration, evaluation, store, synth
from ._util import parallel_map, read_jsonl, write_json
from .errors import BadConfig, CorruptManifest, InvalidArtifact, ModalBridgeError

PRIMARY_K = 20


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise BadConfig(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise BadConfig(f"config file {path} must hold tables")
    return data


def _section(config: Mapping[str, Any], *names: str) -> dict[str, Any]:
    node: Any = config
    for name in names:
        node = node.get(name) if isinstance(node, dict) else None
        if node is None:
            return {}
    return node if isinstance(node, dict) else {}


def _resolve(args: argparse.Namespace, section: Mapping[str, Any], name: str, builtin: Any) -> Any:
    """Flag value if given, else TOML value, else built-in default."""
    value = getattr(args, name.replace("-", "_"))
    if value is not None:
        return value
    if name in section:
        return section[name]
    return builtin


def _diag(err: ModalBridgeError) -> None:
    sys.stderr.write(json.dumps({"error": err.code, "message": str(err)}) + "\n")


# --- subcommand implementations ------------------------------------------------


def _cmd_ingest(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    kind = _resolve(args, section, "kind", "items")
    rows = read_jsonl(Path(args.meta))
    if not rows:
        raise BadConfig(f"{args.meta}: cannot ingest an empty metadata file")
    blob = Path(args.vectors).read_bytes()
    if len(blob) % (4 * len(rows)) != 0:
        raise CorruptManifest(
            f"{args.vectors}: {len(blob)} bytes is not a whole number of "
            f"float32 rows for {len(rows)} records"
        )
    dim = len(blob) // (4 * len(rows))
    matrix = np.frombuffer(blob, dtype="<f4").reshape(len(rows), dim)
    config = {"command": "ingest", "meta": args.meta, "vectors": args.vectors,
              "out": args.out, "kind": kind}
    if kind == "items":
        result = store.ingest(rows, matrix, args.out, config=config)
        print(f"ingested {len(result)} items (dim {result.dim}) into {args.out}")
    else:
        result = store.ingest_queries(rows, matrix, args.out, config=config)
        print(f"ingested {len(result)} queries (dim {result.dim}) into {args.out}")
    return 0


def _cmd_gen_synth(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    config = synth.SynthConfig(
        seed=int(_resolve(args, section, "seed", 42)),
        dim=int(_resolve(args, section, "dim", 64)),
        n_text=int(_resolve(args, section, "n-text", 2000)),
        n_image=int(_resolve(args, section, "n-image", 2000)),
        n_queries=int(_resolve(args, section, "n-queries", 200)),
        gap_offset=float(_resolve(args, section, "gap", 2.0)),
        noise=float(_resolve(args, section, "noise", 0.1)),
        n_calib=(None if _resolve(args, section, "n-calib", None) is None
                 else int(_resolve(args, section, "n-calib", None))),
        imageq_frac=float(_resolve(args, section, "imageq-frac", 0.5)),
    )
    paths = synth.write_synth(config, args.out)
    print(f"synthetic benchmark written to {args.out}")
    for name in ("store", "queries_eval", "queries_calib", "qrels_eval", "qrels_calib"):
        print(f"  {name}: {paths[name]}")
    return 0


def _cmd_pseudo_pairs(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    threads = int(_resolve(args, section, "threads", 1))
    queries = store.load_queries(args.queries)
    db = store.load_store(args.store)
    pairs = calibration.build_pseudo_pairs(queries, db, threads=threads)
    config = {
        "command": "pseudo-pairs",
        "queries": args.queries,
        "store": args.store,
        "out": args.out,
        "store_fingerprint": db.fingerprint,
    }
    calibration.write_pairs(args.out, pairs, config=config)
    total = sum(len(v) for v in pairs.values())
    print(f"wrote {total} pseudo pairs ({len(queries)} queries x 2 modalities) to {args.out}")
    return 0


def _cmd_estimate_stats(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    threads = int(_resolve(args, section, "threads", 1))
    divisor = _resolve(args, section, "variance-divisor", "n")
    ddof = 0 if divisor == "n" else 1
    db = store.load_store(args.store)
    config: dict[str, Any] = {
        "command": "estimate-stats",
        "source": args.source,
        "store": args.store,
        "out": args.out,
        "variance_divisor": divisor,
    }
    if args.pairs is not None:
        pairs, pairs_config = calibration.load_pairs(args.pairs, store=db)
        config["pairs"] = args.pairs
        if pairs_config:
            config["pairs_config"] = pairs_config
    else:
        queries = store.load_queries(args.queries)
        qrels = store.load_qrels(args.qrels, store=db)
        pairs = calibration.build_labeled_pairs(queries, db, qrels, threads=threads)
        config["qrels"] = args.qrels
        config["queries"] = args.queries
    bundle = calibration.estimate_stats(
        pairs, source=args.source, store_fingerprint=db.fingerprint, ddof=ddof
    )
    calibration.write_stats(args.out, bundle, config=config)
    for m in store.MODALITIES:
        s = bundle.for_modality(m)
        print(f"{m.value}: mean={s.mean:.6f} std={s.std:.6f} count={s.count}")
    print(f"stats written to {args.out}")
    return 0


def _calibration_queries_path(stats_path: str) -> str | None:
    """The query set recorded in a stats file's provenance chain, if any."""
    cfg = calibration.stats_config(stats_path)
    pairs_cfg = cfg.get("pairs_config")
    if isinstance(pairs_cfg, dict) and isinstance(pairs_cfg.get("queries"), str):
        return pairs_cfg["queries"]
    if isinstance(cfg.get("queries"), str):
        return cfg["queries"]
    return None


def _cmd_retrieve(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    threads = int(_resolve(args, section, "threads", 1))
    k = int(_resolve(args, section, "k", PRIMARY_K))
    if k < 1:
        raise BadConfig(f"k must be at least 1, got {k}")
    queries = store.load_queries(args.queries)
    db = store.load_store(args.store)
    stats = None
    if args.method == "std":
        stats = calibration.load_stats(args.stats)
        if stats.store_fingerprint and stats.store_fingerprint != db.fingerprint:
            sys.stderr.write(
                "warning: stats were estimated on a different store "
                f"(fingerprint {stats.store_fingerprint[:12]}... vs {db.fingerprint[:12]}...)\n"
            )
        calib_queries = _calibration_queries_path(args.stats)
        if calib_queries is not None:
            a, b = Path(calib_queries), Path(args.queries)
            if a.exists() and b.exists() and a.resolve() == b.resolve():
                raise BadConfig(
                    "evaluation queries must be a different file from the "
                    f"calibration query set ({calib_queries})"
                )

    def rank(query: store.QueryRecord):
        return query.id, calibration.retrieve(query, db, k, method=args.method, stats=stats)

    ranked = parallel_map(rank, list(queries), threads=threads)
    run = evaluation.RankedRun(method=args.method, k=k, per_query=dict(ranked))
    config = {
        "command": "retrieve",
        "queries": args.queries,
        "store": args.store,
        "method": args.method,
        "k": k,
        "stats": args.stats,
        "store_fingerprint": db.fingerprint,
    }
    evaluation.write_run(args.out, run, config=config)
    print(f"wrote {args.method} run (k={k}, {len(queries)} queries) to {args.out}")
    return 0


def _parse_k_list(text: str) -> list[int]:
    try:
        ks = sorted({int(part) for part in text.split(",") if part.strip()})
    except ValueError as exc:
        raise BadConfig(f"bad k list {text!r}: {exc}") from exc
    if not ks or ks[0] < 1:
        raise BadConfig(f"k list must hold positive integers, got {text!r}")
    return ks


def _cmd_evaluate(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    recall_mode = _resolve(args, section, "recall-mode", "fraction")
    ks = _parse_k_list(str(_resolve(args, section, "k", str(PRIMARY_K))))
    qtypes: Mapping[str, str] = {}
    if args.queries is not None:
        qtypes = store.load_queries(args.queries).qtype_map()
    qrels = store.load_qrels(args.qrels)

    runs: dict[str, dict[int, evaluation.MetricReport]] = {}
    run_files: dict[str, str] = {}
    for run_path in args.run:
        run, _header = evaluation.load_run(run_path)
        if run.method in runs:
            raise InvalidArtifact(
                f"two runs share method {run.method!r}; reports key on method"
            )
        if run.k < max(ks):
            raise InvalidArtifact(
                f"{run_path} holds top-{run.k} lists; cannot evaluate at k={max(ks)}"
            )
        runs[run.method] = {
            k: evaluation.evaluate_run(run, qrels, qtypes, k=k, recall_mode=recall_mode)
            for k in ks
        }
        run_files[run.method] = str(run_path)

    config = {
        "command": "evaluate",
        "run": [str(p) for p in args.run],
        "qrels": args.qrels,
        "queries": args.queries,
        "k": ks,
        "recall_mode": recall_mode,
    }
    report = evaluation.report_to_json(runs, run_files, recall_mode, config=config)
    out = Path(args.out)
    write_json(out, report)
    table_k = PRIMARY_K if PRIMARY_K in ks else max(ks)
    table = evaluation.format_report_table(runs, table_k)
    out.with_suffix(".txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"report written to {out}")
    return 0


def _select_queries(queries: store.QuerySet, qtype: str | None) -> list[store.QueryRecord]:
    if qtype is None:
        return list(queries)
    selected = [
        q for q in queries if q.qtype is not None and q.qtype.value == qtype
    ]
    if not selected:
        raise BadConfig(f"no queries with qtype {qtype}")
    return selected


def _cmd_analyze_skewness(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    threads = int(_resolve(args, section, "threads", 1))
    queries = store.load_queries(args.queries)
    db = store.load_store(args.store)
    selected = _select_queries(queries, args.qtype)
    rows = parallel_map(
        lambda q: (q.id, analysis.query_skewness(q, db)), selected, threads=threads
    )
    config = {
        "command": "analyze skewness",
        "queries": args.queries,
        "store": args.store,
        "out": args.out,
        "qtype": args.qtype,
    }
    analysis.write_skewness_report(args.out, dict(rows), config=config, emit_csv=args.csv)
    print(f"skewness over {len(rows)} queries written to {args.out}")
    return 0


def _cmd_analyze_gap(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    threads = int(_resolve(args, section, "threads", 1))
    bins = int(_resolve(args, section, "bins", analysis.GAP_HIST_BINS))
    lo, hi = (
        args.range if args.range is not None
        else section.get("range", list(analysis.GAP_HIST_RANGE))
    )
    queries = store.load_queries(args.queries)
    db = store.load_store(args.store)
    stats = calibration.load_stats(args.stats)
    selected = _select_queries(queries, args.qtype)
    gaps = parallel_map(
        lambda q: analysis.mean_score_gap(q, db, stats), selected, threads=threads
    )
    hist = analysis.histogram([g.gap for g in gaps], bins, (float(lo), float(hi)))
    config = {
        "command": "analyze gap",
        "queries": args.queries,
        "store": args.store,
        "stats": args.stats,
        "out": args.out,
        "qtype": args.qtype,
        "bins": bins,
        "range": [float(lo), float(hi)],
    }
    analysis.write_gap_report(args.out, hist, gaps, config=config, emit_csv=args.csv)
    print(f"gap histogram over {len(gaps)} queries written to {args.out}")
    return 0


def _cmd_analyze_svd(args: argparse.Namespace, section: Mapping[str, Any]) -> int:
    queries = store.load_queries(args.queries)
    db = store.load_store(args.store)
    qrels = store.load_qrels(args.qrels, store=db)
    matrix, labels = analysis.collect_projection_rows(queries, db, qrels, qtype=args.qtype)
    projection = analysis.svd_project(matrix, labels)
    config = {
        "command": "analyze svd",
        "queries": args.queries,
        "store": args.store,
        "qrels": args.qrels,
        "out": args.out,
        "qtype": args.qtype,
    }
    analysis.write_projection(args.out, projection, config=config, emit_csv=args.csv)
    print(f"projection of {len(labels)} embeddings written to {args.out}")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalbridge",
        description="Calibrated multi-modal dense retrieval pipelines",
    )
    parser.add_argument("--config", help="TOML file supplying defaults for optional flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="write a store/query directory from metadata + raw vectors")
    p.add_argument("--meta", required=True, help="metadata JSONL")
    p.add_argument("--vectors", required=True, help="raw float32 little-endian row block")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--kind", choices=("items", "queries"), default=None)

    p = sub.add_parser("gen-synth", help="generate a deterministic synthetic benchmark")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--n-text", type=int, default=None)
    p.add_argument("--n-image", type=int, default=None)
    p.add_argument("--n-queries", type=int, default=None)
    p.add_argument("--gap", type=float, default=None, help="norm of the shared text-side offset")
    p.add_argument("--noise", type=float, default=None, help="within-cluster spread magnitude")
    p.add_argument("--n-calib", type=int, default=None, help="calibration queries (default: n-queries)")
    p.add_argument("--imageq-frac", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pseudo-pairs", help="top-1 pair per query and modality")
    p.add_argument("--queries", required=True, help="calibration query directory")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True, help="pairs JSONL")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("estimate-stats", help="per-modality mean/std from pairs or qrels")
    p.add_argument("--pairs", help="pairs JSONL (pseudo mode, or precomputed labeled pairs)")
    p.add_argument("--source", choices=("pseudo", "labeled"), required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--qrels", help="labeled mode: gold pairs source")
    p.add_argument("--queries", help="labeled mode: query directory for embeddings")
    p.add_argument("--variance-divisor", choices=("n", "n-1"), default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("retrieve", help="rank the store for every query")
    p.add_argument("--queries", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--method", choices=("cos", "std"), required=True)
    p.add_argument("--stats", help="stats.json (required for --method std)")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="run JSONL")

    p = sub.add_parser("evaluate", help="Recall/MRR/NDCG for one or more runs")
    p.add_argument("--run", action="append", required=True, help="run JSONL (repeatable)")
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", default=None, help="comma-separated cutoffs, e.g. 1,5,20,100")
    p.add_argument("--queries", help="query directory supplying qtypes for grouping")
    p.add_argument("--recall-mode", choices=("fraction", "any-hit"), default=None)
    p.add_argument("--out", required=True, help="report JSON (a .txt table lands beside it)")

    pa = sub.add_parser("analyze", help="modality-gap diagnostics")
    asub = pa.add_subparsers(dest="analysis", required=True)

    p = asub.add_parser("skewness", help="per-query similarity-distribution skewness")
    p.add_argument("--queries", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--qtype", choices=("TextQ", "ImageQ"), default=None)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)

    p = asub.add_parser("gap", help="histogram of standardized image-minus-text mean scores")
    p.add_argument("--queries", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--range", type=float, nargs=2, default=None, metavar=("LO", "HI"))
    p.add_argument("--qtype", choices=("TextQ", "ImageQ"), default=None)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)

    p = asub.add_parser("svd", help="2-D projection of queries and their positives")
    p.add_argument("--queries", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--qtype", choices=("TextQ", "ImageQ"), default=None)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        file_config = _load_config_file(args.config)

        if args.command == "estimate-stats":
            has_pairs = args.pairs is not None
            has_labeled_inputs = args.qrels is not None and args.queries is not None
            if has_pairs == has_labeled_inputs:
                parser.error(
                    "estimate-stats needs exactly one of --pairs or (--qrels and --queries)"
                )
            if args.qrels is not None and args.source != "labeled":
                parser.error("--qrels implies --source labeled")
        if args.command == "retrieve" and args.method == "std" and args.stats is None:
            parser.error("--method std requires --stats")

        if args.command == "analyze":
            section = _section(file_config, "analyze", args.analysis)
            handler = {
                "skewness": _cmd_analyze_skewness,
                "gap": _cmd_analyze_gap,
                "svd": _cmd_analyze_svd,
            }[args.analysis]
            return handler(args, section)

        section = _section(file_config, args.command)
        handler = {
            "ingest": _cmd_ingest,
            "gen-synth": _cmd_gen_synth,
            "pseudo-pairs": _cmd_pseudo_pairs,
            "estimate-stats": _cmd_estimate_stats,
            "retrieve": _cmd_retrieve,
            "evaluate": _cmd_evaluate,
        }[args.command]
        return handler(args, section)
    except ModalBridgeError as err:
        _diag(err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
