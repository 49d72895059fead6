"""CLI wiring: exit codes, pipeline artifacts, determinism, config file."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from modalbridge.cli import main
from modalbridge.store import load_queries, load_store


def run_cli(*args: str) -> int:
    return main([str(a) for a in args])


def gen_synth(out: Path, **overrides) -> None:
    flags = {
        "seed": 11, "dim": 16, "n-text": 60, "n-image": 60, "n-queries": 12,
        "gap": 2.0, "noise": 0.1,
    }
    flags.update(overrides)
    args = ["gen-synth", "--out", str(out)]
    for key, value in flags.items():
        args += [f"--{key}", str(value)]
    assert run_cli(*args) == 0


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_retrieve_std_without_stats_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(
            "retrieve", "--queries", tmp_path / "q", "--store", tmp_path / "s",
            "--method", "std", "--k", "5", "--out", tmp_path / "run.jsonl",
        )
    assert exc.value.code == 2


def test_estimate_stats_input_combinations_are_checked(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(
            "estimate-stats", "--source", "pseudo", "--store", tmp_path / "s",
            "--out", tmp_path / "stats.json",
        )
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run_cli(
            "estimate-stats", "--source", "pseudo", "--store", tmp_path / "s",
            "--qrels", tmp_path / "qr.jsonl", "--queries", tmp_path / "q",
            "--out", tmp_path / "stats.json",
        )
    assert exc.value.code == 2


def test_module_errors_exit_1_with_diagnostic(tmp_path, capsys):
    rc = run_cli(
        "retrieve", "--queries", tmp_path / "missing", "--store", tmp_path / "missing",
        "--method", "cos", "--k", "5", "--out", tmp_path / "run.jsonl",
    )
    assert rc == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    diag = json.loads(err)
    assert diag["error"] == "CorruptManifest"
    assert "message" in diag


def test_full_pipeline_writes_all_artifacts(tmp_path, capsys):
    gen_synth(tmp_path / "synth")
    synth = tmp_path / "synth"
    assert run_cli(
        "pseudo-pairs", "--queries", synth / "queries_calib", "--store", synth / "store",
        "--out", tmp_path / "pairs.jsonl",
    ) == 0
    assert run_cli(
        "estimate-stats", "--pairs", tmp_path / "pairs.jsonl", "--source", "pseudo",
        "--store", synth / "store", "--out", tmp_path / "stats.json",
    ) == 0
    for method in ("cos", "std"):
        args = [
            "retrieve", "--queries", synth / "queries_eval", "--store", synth / "store",
            "--method", method, "--k", "20", "--out", tmp_path / f"run_{method}.jsonl",
        ]
        if method == "std":
            args += ["--stats", tmp_path / "stats.json"]
        assert run_cli(*args) == 0
    assert run_cli(
        "evaluate", "--run", tmp_path / "run_cos.jsonl", "--run", tmp_path / "run_std.jsonl",
        "--qrels", synth / "qrels_eval.jsonl", "--k", "1,5,20",
        "--queries", synth / "queries_eval", "--out", tmp_path / "report.json",
    ) == 0

    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["runs"]) == {"cos", "std"}
    assert report["ks"] == [1, 5, 20]
    assert (tmp_path / "report.txt").exists()
    table = capsys.readouterr().out
    assert "Recall@20" in table

    # every artifact embeds its config
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["config"]["command"] == "estimate-stats"
    assert stats["config"]["pairs_config"]["command"] == "pseudo-pairs"
    header = json.loads((tmp_path / "run_std.jsonl").read_text().splitlines()[0])
    assert header["config"]["method"] == "std"
    assert report["config"]["command"] == "evaluate"


def test_pipeline_rerun_is_byte_identical(tmp_path, monkeypatch):
    # identical flags (relative paths, different working dirs) -> identical bytes
    snapshots = []
    for name in ("a", "b"):
        base = tmp_path / name
        base.mkdir()
        monkeypatch.chdir(base)
        gen_synth(Path("synth"))
        assert run_cli(
            "pseudo-pairs", "--queries", "synth/queries_calib",
            "--store", "synth/store", "--out", "pairs.jsonl",
        ) == 0
        assert run_cli(
            "estimate-stats", "--pairs", "pairs.jsonl", "--source", "pseudo",
            "--store", "synth/store", "--out", "stats.json",
        ) == 0
        snapshots.append(
            ((base / "pairs.jsonl").read_bytes(), (base / "stats.json").read_bytes(),
             tree_bytes(base / "synth"))
        )
    assert snapshots[0] == snapshots[1]


def test_thread_count_does_not_change_artifacts(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    gen_synth(Path("synth"))
    snapshots = []
    for threads in (1, 8):
        assert run_cli(
            "pseudo-pairs", "--queries", "synth/queries_calib", "--store", "synth/store",
            "--threads", threads, "--out", "pairs.jsonl",
        ) == 0
        assert run_cli(
            "retrieve", "--queries", "synth/queries_eval", "--store", "synth/store",
            "--method", "cos", "--k", "10", "--threads", threads,
            "--out", "run.jsonl",
        ) == 0
        snapshots.append(
            ((tmp_path / "pairs.jsonl").read_bytes(), (tmp_path / "run.jsonl").read_bytes())
        )
    assert snapshots[0] == snapshots[1]


def test_retrieve_refuses_calibration_queries_for_evaluation(tmp_path, capsys):
    gen_synth(tmp_path / "synth")
    synth = tmp_path / "synth"
    assert run_cli(
        "pseudo-pairs", "--queries", synth / "queries_calib", "--store", synth / "store",
        "--out", tmp_path / "pairs.jsonl",
    ) == 0
    assert run_cli(
        "estimate-stats", "--pairs", tmp_path / "pairs.jsonl", "--source", "pseudo",
        "--store", synth / "store", "--out", tmp_path / "stats.json",
    ) == 0
    rc = run_cli(
        "retrieve", "--queries", synth / "queries_calib", "--store", synth / "store",
        "--method", "std", "--stats", tmp_path / "stats.json", "--k", "5",
        "--out", tmp_path / "run.jsonl",
    )
    assert rc == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "BadConfig"


def test_ingest_roundtrip_via_cli(tmp_path):
    meta = tmp_path / "meta.jsonl"
    meta.write_text(
        '{"id": "t1", "modality": "text", "text": "hello", "uri": null}\n'
        '{"id": "i1", "modality": "image", "text": null, "uri": "img://1"}\n'
    )
    vectors = np.array([[3.0, 4.0], [1.0, 0.0]], dtype="<f4")
    (tmp_path / "vectors.f32le").write_bytes(vectors.tobytes())
    assert run_cli(
        "ingest", "--meta", meta, "--vectors", tmp_path / "vectors.f32le",
        "--out", tmp_path / "store",
    ) == 0
    loaded = load_store(tmp_path / "store")
    assert loaded.ids == ["i1", "t1"]
    assert abs(np.linalg.norm(loaded.vectors[0].astype(np.float64)) - 1.0) < 1e-6


def test_ingest_queries_via_cli(tmp_path):
    meta = tmp_path / "meta.jsonl"
    meta.write_text('{"id": "q1", "text": "what", "uri": null, "qtype": "ImageQ"}\n')
    (tmp_path / "v.f32le").write_bytes(np.array([[1.0, 0.0]], dtype="<f4").tobytes())
    assert run_cli(
        "ingest", "--meta", meta, "--vectors", tmp_path / "v.f32le",
        "--kind", "queries", "--out", tmp_path / "queries",
    ) == 0
    queries = load_queries(tmp_path / "queries")
    assert queries.qtype_map() == {"q1": "ImageQ"}


def test_labeled_stats_via_cli_match_pseudo_on_coincident_instance(tmp_path):
    # store/queries where every per-modality argmax is the gold positive
    meta_items, meta_queries, qrels_lines = [], [], []
    item_vecs, query_vecs = [], []
    dim = 8
    for i in range(4):
        text_vec = [0.0] * dim
        text_vec[i] = 1.0
        image_vec = [0.0] * dim
        image_vec[i] = 1.0
        image_vec[(i + 4) % dim] = 0.3 + 0.05 * i
        query_vec = [0.0] * dim
        query_vec[i] = 1.0
        query_vec[(i + 4) % dim] = 0.05 + 0.03 * i
        meta_items.append({"id": f"t{i}", "modality": "text", "text": None, "uri": None})
        meta_items.append({"id": f"i{i}", "modality": "image", "text": None, "uri": None})
        item_vecs += [text_vec, image_vec]
        meta_queries.append({"id": f"q{i}", "text": None, "uri": None})
        query_vecs.append(query_vec)
        qrels_lines.append({"query_id": f"q{i}", "positive_ids": [f"t{i}", f"i{i}"]})

    (tmp_path / "items.jsonl").write_text("".join(json.dumps(r) + "\n" for r in meta_items))
    (tmp_path / "items.f32le").write_bytes(np.array(item_vecs, dtype="<f4").tobytes())
    (tmp_path / "queries.jsonl").write_text("".join(json.dumps(r) + "\n" for r in meta_queries))
    (tmp_path / "queries.f32le").write_bytes(np.array(query_vecs, dtype="<f4").tobytes())
    (tmp_path / "qrels.jsonl").write_text("".join(json.dumps(r) + "\n" for r in qrels_lines))

    assert run_cli("ingest", "--meta", tmp_path / "items.jsonl", "--vectors",
                   tmp_path / "items.f32le", "--out", tmp_path / "store") == 0
    assert run_cli("ingest", "--meta", tmp_path / "queries.jsonl", "--vectors",
                   tmp_path / "queries.f32le", "--kind", "queries",
                   "--out", tmp_path / "queries") == 0
    assert run_cli("pseudo-pairs", "--queries", tmp_path / "queries", "--store",
                   tmp_path / "store", "--out", tmp_path / "pairs.jsonl") == 0
    assert run_cli("estimate-stats", "--pairs", tmp_path / "pairs.jsonl", "--source",
                   "pseudo", "--store", tmp_path / "store",
                   "--out", tmp_path / "stats_pseudo.json") == 0
    assert run_cli("estimate-stats", "--source", "labeled", "--qrels", tmp_path / "qrels.jsonl",
                   "--queries", tmp_path / "queries", "--store", tmp_path / "store",
                   "--out", tmp_path / "stats_labeled.json") == 0

    pseudo = json.loads((tmp_path / "stats_pseudo.json").read_text())
    labeled = json.loads((tmp_path / "stats_labeled.json").read_text())
    assert pseudo["text"] == labeled["text"]  # bit-identical through JSON round-trip
    assert pseudo["image"] == labeled["image"]
    assert (pseudo["source"], labeled["source"]) == ("pseudo", "labeled")


def test_config_file_supplies_defaults_and_flags_override(tmp_path):
    config = tmp_path / "config.toml"
    config.write_text('[gen-synth]\nseed = 99\ndim = 16\nn-text = 25\nn-image = 25\nn-queries = 4\n')
    assert run_cli("--config", config, "gen-synth", "--out", tmp_path / "a") == 0
    stored = json.loads((tmp_path / "a" / "synth_config.json").read_text())["config"]
    assert stored["seed"] == 99 and stored["n_text"] == 25
    # explicit flag wins over the file
    assert run_cli("--config", config, "gen-synth", "--seed", "5", "--out", tmp_path / "b") == 0
    stored = json.loads((tmp_path / "b" / "synth_config.json").read_text())["config"]
    assert stored["seed"] == 5


def test_analyze_subcommands_write_artifacts(tmp_path):
    gen_synth(tmp_path / "synth", **{"n-text": 30, "n-image": 30, "n-queries": 8})
    synth = tmp_path / "synth"
    assert run_cli(
        "pseudo-pairs", "--queries", synth / "queries_calib", "--store", synth / "store",
        "--out", tmp_path / "pairs.jsonl",
    ) == 0
    assert run_cli(
        "estimate-stats", "--pairs", tmp_path / "pairs.jsonl", "--source", "pseudo",
        "--store", synth / "store", "--out", tmp_path / "stats.json",
    ) == 0
    assert run_cli(
        "analyze", "skewness", "--queries", synth / "queries_eval",
        "--store", synth / "store", "--out", tmp_path / "skewness.json", "--csv",
    ) == 0
    assert run_cli(
        "analyze", "gap", "--queries", synth / "queries_eval", "--store", synth / "store",
        "--stats", tmp_path / "stats.json", "--qtype", "ImageQ",
        "--out", tmp_path / "gap_hist.json", "--csv",
    ) == 0
    assert run_cli(
        "analyze", "svd", "--queries", synth / "queries_eval", "--store", synth / "store",
        "--qrels", synth / "qrels_eval.jsonl", "--qtype", "ImageQ",
        "--out", tmp_path / "projection.json", "--csv",
    ) == 0
    for name in ("skewness.json", "skewness.csv", "gap_hist.json", "gap_hist.csv",
                 "gap_hist_values.csv", "projection.json", "projection.csv"):
        assert (tmp_path / name).exists(), name
    skew = json.loads((tmp_path / "skewness.json").read_text())
    assert skew["count"] == 8
    gap = json.loads((tmp_path / "gap_hist.json").read_text())
    assert gap["count"] == 4  # half the eval queries are ImageQ
    proj = json.loads((tmp_path / "projection.json").read_text())
    assert {l["role"] for l in proj["labels"]} <= {"query", "positive_text", "positive_image"}


def test_every_pipeline_artifact_validates_against_its_loader(tmp_path):
    from modalbridge.calibration import load_pairs, load_stats
    from modalbridge.evaluation import load_run
    from modalbridge.store import load_qrels

    gen_synth(tmp_path / "synth")
    synth = tmp_path / "synth"
    assert run_cli(
        "pseudo-pairs", "--queries", synth / "queries_calib", "--store", synth / "store",
        "--out", tmp_path / "pairs.jsonl",
    ) == 0
    assert run_cli(
        "estimate-stats", "--pairs", tmp_path / "pairs.jsonl", "--source", "pseudo",
        "--store", synth / "store", "--out", tmp_path / "stats.json",
    ) == 0
    assert run_cli(
        "retrieve", "--queries", synth / "queries_eval", "--store", synth / "store",
        "--method", "std", "--stats", tmp_path / "stats.json", "--k", "10",
        "--out", tmp_path / "run.jsonl",
    ) == 0

    store = load_store(synth / "store")
    assert len(store) == 120
    for name in ("queries_eval", "queries_calib"):
        assert len(load_queries(synth / name)) == 12
    for name in ("qrels_eval.jsonl", "qrels_calib.jsonl"):
        assert len(load_qrels(synth / name, store=store)) == 12
    pairs, pairs_config = load_pairs(tmp_path / "pairs.jsonl", store=store)
    assert sum(len(v) for v in pairs.values()) == 24
    assert pairs_config["store_fingerprint"] == store.fingerprint
    stats = load_stats(tmp_path / "stats.json")
    assert stats.store_fingerprint == store.fingerprint
    run, run_config = load_run(tmp_path / "run.jsonl")
    assert run.method == "std" and len(run.per_query) == 12
    assert run_config["store_fingerprint"] == store.fingerprint


def test_console_script_entry_point(tmp_path):
    import subprocess

    result = subprocess.run(
        ["modalbridge", "gen-synth", "--seed", "1", "--dim", "8", "--n-text", "5",
         "--n-image", "5", "--n-queries", "2", "--out", str(tmp_path / "synth")],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    assert load_store(tmp_path / "synth" / "store").dim == 8
    usage = subprocess.run(
        ["modalbridge", "retrieve", "--queries", "x", "--store", "y",
         "--method", "std", "--out", "z"],
        capture_output=True, text=True,
    )
    assert usage.returncode == 2


def test_evaluate_rejects_duplicate_methods(tmp_path):
    gen_synth(tmp_path / "synth", **{"n-queries": 4})
    synth = tmp_path / "synth"
    assert run_cli(
        "retrieve", "--queries", synth / "queries_eval", "--store", synth / "store",
        "--method", "cos", "--k", "5", "--out", tmp_path / "run.jsonl",
    ) == 0
    rc = run_cli(
        "evaluate", "--run", tmp_path / "run.jsonl", "--run", tmp_path / "run.jsonl",
        "--qrels", synth / "qrels_eval.jsonl", "--k", "5", "--out", tmp_path / "report.json",
    )
    assert rc == 1


def test_evaluate_rejects_k_beyond_run_depth(tmp_path):
    gen_synth(tmp_path / "synth", **{"n-queries": 4})
    synth = tmp_path / "synth"
    assert run_cli(
        "retrieve", "--queries", synth / "queries_eval", "--store", synth / "store",
        "--method", "cos", "--k", "5", "--out", tmp_path / "run.jsonl",
    ) == 0
    rc = run_cli(
        "evaluate", "--run", tmp_path / "run.jsonl", "--qrels", synth / "qrels_eval.jsonl",
        "--k", "1,100", "--out", tmp_path / "report.json",
    )
    assert rc == 1
