import json

import pytest

from membase.cli import bench_rerank, main

from .fixtures import AGENT_DOC, full_cover_plan_reply
from .test_engine import EXTRACTION_REPLY, MESSAGES


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "schema.json").write_text(AGENT_DOC)
    (tmp_path / "session.json").write_text(json.dumps({
        "id": "s1", "user": "u1",
        "messages": [{"role": r, "content": c, "timestamp": 1000 + i}
                     for i, (r, c) in enumerate(MESSAGES)]}))
    (tmp_path / "script.json").write_text(json.dumps([
        {"match": "inclusive 0-based message indices",
         "reply": full_cover_plan_reply(len(MESSAGES))},
        {"match": "Reply with JSON only", "reply": EXTRACTION_REPLY},
        {"match": "Merge the new items", "reply": "merged usage notes"},
    ]))
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- schema validate ----------------------------------------------------------

def test_schema_validate_ok(workdir, capsys):
    code, out, _ = run(capsys, "schema", "validate",
                       str(workdir / "schema.json"))
    assert code == 0
    last = json.loads(out.strip().splitlines()[-1])
    assert last == {"status": "valid", "tenant": "agent", "version": 1}


def test_schema_validate_blocking_exits_1(workdir, capsys):
    bad = json.loads(AGENT_DOC)
    bad["entities"][0]["Properties"][0]["AggregateExpression"]["Op"] = "AVG"
    path = workdir / "bad.json"
    path.write_text(json.dumps(bad))
    code, out, _ = run(capsys, "schema", "validate", str(path))
    assert code == 1
    lines = [json.loads(line) for line in out.strip().splitlines()]
    assert any(v["severity"] == "error" for v in lines)


def test_schema_validate_syntax_error(workdir, capsys):
    path = workdir / "broken.json"
    path.write_text("{nope")
    code, _, err = run(capsys, "schema", "validate", str(path))
    assert code == 1
    detail = json.loads(err.strip())
    assert detail["code"] == "schema_syntax"


# --- ingest + query -----------------------------------------------------------

def test_ingest_prints_flush_summary(workdir, capsys):
    code, out, _ = run(capsys, "ingest", str(workdir / "session.json"),
                       "--schema", str(workdir / "schema.json"),
                       "--mock-script", str(workdir / "script.json"))
    assert code == 0
    summary = json.loads(out)
    assert summary["status"] == "flushed"
    assert len(summary["event_ids"]) == 2
    assert summary["patched_entities"] == ["ToolProfile|tool=web_search"]


def test_ingest_then_query_roundtrip(workdir, capsys):
    data = workdir / "state"
    code, _, _ = run(capsys, "ingest", str(workdir / "session.json"),
                     "--schema", str(workdir / "schema.json"),
                     "--mock-script", str(workdir / "script.json"),
                     "--data-dir", str(data))
    assert code == 0
    code, out, _ = run(capsys, "query", "asyncio task groups",
                       "--data-dir", str(data), "--k", "3")
    assert code == 0
    results = json.loads(out)["results"]
    assert results
    assert "asyncio" in results[0]["text"]


# --- bench --------------------------------------------------------------------

def test_bench_rerank_reports_percentiles(capsys):
    code, out, _ = run(capsys, "bench", "rerank", "--candidates", "40",
                       "--tokens", "8", "--dim", "64", "--iterations", "5")
    assert code == 0
    report = json.loads(out)
    assert report["candidates"] == 40
    assert report["p50_ms"] > 0
    assert report["p95_ms"] >= report["p50_ms"]


def test_bench_rerank_function_shape():
    report = bench_rerank(10, 4, dim=32, iterations=3)
    assert set(report) == {"candidates", "tokens", "dim", "iterations",
                           "p50_ms", "p95_ms"}


# --- snapshot / restore -------------------------------------------------------

def test_snapshot_and_restore_report(workdir, capsys):
    data = workdir / "state"
    run(capsys, "ingest", str(workdir / "session.json"),
        "--schema", str(workdir / "schema.json"),
        "--mock-script", str(workdir / "script.json"),
        "--data-dir", str(data))
    code, out, _ = run(capsys, "snapshot", "--data-dir", str(data))
    assert code == 0
    snap = json.loads(out)
    assert snap["status"] == "snapshotted"
    assert snap["records"] > 0
    code, out, _ = run(capsys, "restore", str(data))
    assert code == 0
    rep = json.loads(out)
    assert rep["status"] == "restored"
    assert rep["records"] == snap["records"]
    assert rep["entities"] == 1


# --- failure shape ------------------------------------------------------------

def test_error_exits_nonzero_with_problem_detail(workdir, capsys):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    code, _, err = run(capsys, "serve", "--config", str(cfg))
    assert code == 1
    detail = json.loads(err.strip())
    assert detail["code"] == "config"
    assert "no_such_key" in detail["message"]
