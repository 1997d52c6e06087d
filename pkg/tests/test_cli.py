import json

import pytest
from typer.testing import CliRunner

from src.cli.app import app
from src.db.branch_store import BranchStore
from src.services.metrics_service import TABLE_HEADER

runner = CliRunner()


def read_alerts(path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def invoke(*args: str):
    return runner.invoke(app, [str(a) for a in args])


def test_hunt_writes_alerts(fixtures_dir, tmp_path, expected_alerts):
    out = tmp_path / "alerts.jsonl"
    result = invoke(
        "hunt", "--query", fixtures_dir / "ztmp_query.json",
        "--events", fixtures_dir / "ztmp_events.jsonl", "--out", out,
    )
    assert result.exit_code == 0, result.output
    (alert,) = read_alerts(out)
    (expected,) = expected_alerts["ztmp_dropper"]
    assert alert["mapping"] == expected["mapping"]
    assert alert["score"] == expected["score"]


@pytest.mark.parametrize("window", ["0", "5"])
def test_watch_matches_hunt(fixtures_dir, tmp_path, window):
    events = ["--events", fixtures_dir / "inject_events_1.jsonl", "--events", fixtures_dir / "inject_events_2.jsonl"]
    hunted, watched = tmp_path / "hunt.jsonl", tmp_path / "watch.jsonl"
    result = invoke(
        "hunt", "--query", fixtures_dir / "inject_query.json", *events, "--reorder-window", window, "--out", hunted
    )
    assert result.exit_code == 0, result.output
    result = invoke(
        "watch", "--query", fixtures_dir / "inject_query.json", *events,
        "--reorder-window", window, "--t-forget", "3600", "--store", tmp_path / "b.db", "--out", watched,
    )
    assert result.exit_code == 0, result.output
    assert len(read_alerts(hunted)) == 1
    assert watched.read_bytes() == hunted.read_bytes()


def test_policy_override_hides_the_injection(fixtures_dir, tmp_path):
    out = tmp_path / "alerts.jsonl"
    result = invoke(
        "hunt", "--query", fixtures_dir / "inject_query.json",
        "--events", fixtures_dir / "inject_events_1.jsonl", "--events", fixtures_dir / "inject_events_2.jsonl",
        "--est-override", fixtures_dir / "est_disable_all.json", "--out", out,
    )
    assert result.exit_code == 0
    assert read_alerts(out) == []


def test_ingest_summary(fixtures_dir, tmp_path):
    out = tmp_path / "summary.json"
    result = invoke("ingest", "--events", fixtures_dir / "ztmp_events.jsonl", "--out", out)
    assert result.exit_code == 0, result.output
    summary = json.loads(out.read_text(encoding="utf-8"))
    assert summary["malformed"] == 0
    assert summary["unsupported"] == 0
    assert summary["buffered"] == 0
    assert summary["late_events"] == []
    assert summary["edges"] > 0


def test_metrics_report(fixtures_dir, tmp_path):
    alerts = tmp_path / "alerts.jsonl"
    invoke("hunt", "--query", fixtures_dir / "ztmp_query.json", "--events", fixtures_dir / "ztmp_events.jsonl", "--out", alerts)
    report_path = tmp_path / "report.json"
    result = invoke(
        "metrics", "--alerts", alerts, "--labels", fixtures_dir / "ztmp_labels.json",
        "--strict-labels", "--scenario", "ztmp", "--out", report_path,
    )
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert (report["recall"], report["precision"]) == (100.0, 100.0)
    assert TABLE_HEADER in result.stdout
    assert "ztmp | 0/0 | 100.00 | 100.00" in result.stdout


def test_mutate_then_hunt(fixtures_dir, tmp_path):
    mutated, manifest = tmp_path / "mutated.jsonl", tmp_path / "manifest.json"
    result = invoke(
        "mutate", "--events", fixtures_dir / "ztmp_events.jsonl", "--labels", fixtures_dir / "ztmp_labels.json",
        "--strategy", "III", "--percent", "20", "--seed", "1", "--out", mutated, "--manifest", manifest,
    )
    assert result.exit_code == 0, result.output
    info = json.loads(manifest.read_text(encoding="utf-8"))
    assert info["budget"] == 1
    assert len(info["inserted_nodes"]) == 1
    assert len(mutated.read_text(encoding="utf-8").splitlines()) == 19

    alerts = tmp_path / "alerts.jsonl"
    result = invoke("hunt", "--query", fixtures_dir / "ztmp_query.json", "--events", mutated, "--out", alerts)
    assert result.exit_code == 0
    (alert,) = read_alerts(alerts)
    assert alert["score"] == 5.5
    # the connect now goes through one inserted fork
    assert len(alert["steps"][3]["est_path"]) == 1


def test_verify_random_trials():
    result = invoke("verify", "--trials", "8", "--seed", "3")
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report == {"cases": 8, "mismatches": 0, "details": []}


def test_verify_one_instance(fixtures_dir):
    result = invoke(
        "verify", "--query", fixtures_dir / "ztmp_query.json", "--events", fixtures_dir / "ztmp_events.jsonl"
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout)["cases"] == 1


def test_compact(tmp_path):
    path = tmp_path / "b.db"
    store = BranchStore(path)
    store.put("a", b"1")
    store.put("a", b"2")
    result = invoke("compact", "--store", path)
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout) == {"kept": 1, "dropped": 1}


# -------------------- Failures --------------------


def test_missing_input_is_a_usage_error(fixtures_dir, tmp_path):
    result = invoke("hunt", "--query", tmp_path / "nope.json", "--events", fixtures_dir / "ztmp_events.jsonl")
    assert result.exit_code == 1


def test_broken_query_is_a_data_error(fixtures_dir, tmp_path):
    query = tmp_path / "q.json"
    query.write_text('{"id": "q", "nodes": [', encoding="utf-8")
    result = invoke("hunt", "--query", query, "--events", fixtures_dir / "ztmp_events.jsonl")
    assert result.exit_code == 2


@pytest.mark.parametrize(
    "args",
    [
        ["hunt", "--c-thr", "0"],
        ["mutate", "--strategy", "IV", "--percent", "10", "--labels", "LABELS", "--out", "OUT"],
    ],
)
def test_bad_arguments(args, fixtures_dir, tmp_path):
    replace = {"LABELS": str(fixtures_dir / "ztmp_labels.json"), "OUT": str(tmp_path / "o.jsonl")}
    args = [replace.get(a, a) for a in args]
    if args[0] == "hunt":
        args += ["--query", str(fixtures_dir / "ztmp_query.json")]
    args += ["--events", str(fixtures_dir / "ztmp_events.jsonl")]
    assert invoke(*args).exit_code == 1


def test_verify_needs_query_and_events_together(fixtures_dir):
    assert invoke("verify", "--query", fixtures_dir / "ztmp_query.json").exit_code == 1


def test_compact_missing_store(tmp_path):
    assert invoke("compact", "--store", tmp_path / "none.db").exit_code == 1


def test_lines_that_are_not_utf8_are_skipped(fixtures_dir, tmp_path, expected_alerts):
    events = tmp_path / "mixed.jsonl"
    events.write_bytes(b"\xc3\x28 not text\n" + (fixtures_dir / "ztmp_events.jsonl").read_bytes())
    out = tmp_path / "alerts.jsonl"
    result = invoke("hunt", "--query", fixtures_dir / "ztmp_query.json", "--events", events, "--out", out)
    assert result.exit_code == 0, result.output
    (alert,) = read_alerts(out)
    assert alert["mapping"] == expected_alerts["ztmp_dropper"][0]["mapping"]


@pytest.mark.parametrize("content", [b'{"attack": ["x"], "benign": ["x"]}', b"\xff\xfe"])
def test_bad_label_file_is_a_data_error(fixtures_dir, tmp_path, content):
    labels = tmp_path / "labels.json"
    labels.write_bytes(content)
    alerts = tmp_path / "alerts.jsonl"
    alerts.write_text("", encoding="utf-8")
    result = invoke("metrics", "--alerts", alerts, "--labels", labels)
    assert result.exit_code == 2
    assert json.loads(result.stderr.strip().splitlines()[-1])["error"] == "label"
