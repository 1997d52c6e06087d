"""
Node-level detection metrics against a ground-truth label file.

The label file is JSON: {"attack": [uid, ...], "benign": [uid, ...]}.
"""

import json
from pathlib import Path
from typing import Iterable, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from src.core.errors import ConfigError, LabelError, RecordParseError
from src.core.state import Alert
from src.utils.log_utils import get_logger

logger = get_logger(__name__)


class GroundTruth(BaseModel):
    attack: set[str]
    benign: set[str] = Field(default_factory=set)

    @model_validator(mode="after")
    def _disjoint(self):
        both = self.attack & self.benign
        if both:
            raise ValueError(f"ids labeled both attack and benign: {sorted(both)[:5]}")
        return self

    def labeled(self) -> set[str]:
        return self.attack | self.benign


def load_labels(path: str | Path) -> GroundTruth:
    """An unreadable file raises ConfigError, bad content raises LabelError."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"Cannot read label file {path}: {e}", path=str(path)) from e
    try:
        return GroundTruth.model_validate(json.loads(raw.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as e:
        raise LabelError(f"Invalid label file {path}: {e}", path=str(path)) from e


class MetricsReport(BaseModel):
    scenario: str = ""
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    unlabeled: list[str] = Field(default_factory=list)

    def table_row(self) -> str:
        return f"{self.scenario or '-'} | {self.fn}/{self.fp} | {self.recall:.2f} | {self.precision:.2f}"


TABLE_HEADER = "Scenario | FN/FP | Recall | Prec."


def _percent(num: int, den: int) -> float:
    # an empty denominator has nothing to get wrong
    return round(100.0 * num / den, 2) if den else 100.0


def compute_metrics(
    alert_nodes: Iterable[str],
    truth: GroundTruth,
    *,
    strict: bool = False,
    scenario: str = "",
) -> MetricsReport:
    """
    Confusion counts of alerted entity ids against the labels.

    An alerted id that is in neither label set raises LabelError in strict
    mode and counts as a false positive otherwise.
    """
    alerted = set(alert_nodes)
    unlabeled = sorted(alerted - truth.labeled())
    if unlabeled and strict:
        raise LabelError(f"{len(unlabeled)} alerted ids have no label", unlabeled=unlabeled[:20])

    tp = len(alerted & truth.attack)
    fp = len(alerted - truth.attack)
    fn = len(truth.attack - alerted)
    report = MetricsReport(
        scenario=scenario,
        tp=tp,
        fp=fp,
        fn=fn,
        precision=_percent(tp, tp + fp),
        recall=_percent(tp, tp + fn),
        unlabeled=unlabeled,
    )
    if unlabeled:
        logger.warning(f"{len(unlabeled)} alerted ids are unlabeled, counted as FP")
    logger.info(f"Metrics {scenario or '-'}: TP={tp} FP={fp} FN={fn}")
    return report


def alert_nodes(alerts: Iterable[Alert]) -> set[str]:
    nodes: set[str] = set()
    for alert in alerts:
        nodes |= alert.alert_nodes()
    return nodes


def load_alert_file(path: str | Path) -> list[Alert]:
    """Alerts written by `hunt` / `watch`: one JSON object per line."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"Cannot read alert file {path}: {e}", path=str(path)) from e
    alerts = []
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            alerts.append(Alert.model_validate_json(line))
        except ValidationError as e:
            raise RecordParseError(f"Invalid alert in {path}: {e}", line_no=line_no) from e
    return alerts


def metrics_for_files(
    alerts_path: str | Path, labels_path: str | Path, *, strict: bool = False, scenario: Optional[str] = None
) -> MetricsReport:
    truth = load_labels(labels_path)
    alerts = load_alert_file(alerts_path)
    return compute_metrics(
        alert_nodes(alerts), truth, strict=strict, scenario=scenario or Path(alerts_path).stem
    )
