import json

import pytest
from pydantic import ValidationError

from src.core.errors import ConfigError, LabelError, RecordParseError
from src.services.hunting_service import hunt_snapshot
from src.services.metrics_service import (
    TABLE_HEADER,
    GroundTruth,
    compute_metrics,
    load_labels,
    metrics_for_files,
)


@pytest.fixture
def truth() -> GroundTruth:
    return GroundTruth(
        attack={f"a{i}" for i in range(10)},
        benign={f"b{i}" for i in range(20)},
    )


def test_precision_and_recall(truth):
    alerted = {f"a{i}" for i in range(10)} | {"b0", "b1"}
    report = compute_metrics(alerted, truth, scenario="demo")
    assert (report.tp, report.fp, report.fn) == (10, 2, 0)
    assert report.precision == 83.33
    assert report.recall == 100.0
    assert report.table_row() == "demo | 0/2 | 100.00 | 83.33"
    assert TABLE_HEADER.count("|") == report.table_row().count("|")


def test_missed_attack_nodes(truth):
    report = compute_metrics({"a0", "a1"}, truth)
    assert report.fn == 8
    assert report.recall == 20.0
    assert report.precision == 100.0


def test_no_alerts_at_all(truth):
    report = compute_metrics(set(), truth)
    assert (report.tp, report.fp, report.fn) == (0, 0, 10)
    assert report.recall == 0.0


def test_unlabeled_ids(truth):
    report = compute_metrics({"a0", "mystery"}, truth)
    assert report.fp == 1
    assert report.unlabeled == ["mystery"]
    with pytest.raises(LabelError) as info:
        compute_metrics({"a0", "mystery"}, truth, strict=True)
    assert info.value.details["unlabeled"] == ["mystery"]


def test_overlapping_labels(tmp_path):
    with pytest.raises(ValidationError):
        GroundTruth(attack={"x"}, benign={"x"})
    path = tmp_path / "labels.json"
    path.write_text(json.dumps({"attack": ["x"], "benign": ["x"]}), encoding="utf-8")
    with pytest.raises(LabelError) as info:
        load_labels(path)
    assert info.value.exit_code == 2


@pytest.mark.parametrize("content", [b"not json", b'{"benign": []}', b'{"attack": 3}', b"\xff\xfe{}"])
def test_bad_label_files(tmp_path, content):
    path = tmp_path / "labels.json"
    path.write_bytes(content)
    with pytest.raises(LabelError):
        load_labels(path)


def test_missing_label_file(tmp_path):
    with pytest.raises(ConfigError):
        load_labels(tmp_path / "nowhere.json")


def test_metrics_from_alert_file(load_case, fixtures_dir, tmp_path):
    query, graph, _ = load_case("ztmp")
    alerts_path = tmp_path / "ztmp_run.jsonl"
    alerts_path.write_text(
        "".join(a.model_dump_json() + "\n" for a in hunt_snapshot([query], graph)), encoding="utf-8"
    )
    report = metrics_for_files(alerts_path, fixtures_dir / "ztmp_labels.json", strict=True)
    assert report.scenario == "ztmp_run"
    assert (report.tp, report.fp, report.fn) == (5, 0, 0)
    assert (report.recall, report.precision) == (100.0, 100.0)


def test_bad_alert_file(fixtures_dir, tmp_path):
    alerts_path = tmp_path / "alerts.jsonl"
    alerts_path.write_text('{"score": "high"}\n', encoding="utf-8")
    with pytest.raises(RecordParseError) as info:
        metrics_for_files(alerts_path, fixtures_dir / "ztmp_labels.json")
    assert (info.value.line_no, info.value.exit_code) == (1, 2)
