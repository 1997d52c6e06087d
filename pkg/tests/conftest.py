import json
import os
from pathlib import Path

import pytest

from src.config import EngineSettings
from src.core.query_graph import load_query_file
from src.services.ingest_service import EventReader, build_graph

FIXTURES = Path(__file__).parent / "fixtures"


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PROVHUNT_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set PROVHUNT_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def expected_alerts() -> dict:
    return json.loads((FIXTURES / "expected_alerts.json").read_text(encoding="utf-8"))


@pytest.fixture
def load_case():
    """(query, graph, records) for a named fixture case."""

    def _load(name: str, settings: EngineSettings | None = None):
        query = load_query_file(FIXTURES / f"{name}_query.json")
        paths = sorted(FIXTURES.glob(f"{name}_events*.jsonl"))
        reader = EventReader()
        records = [r for p in paths for r in reader.read_file(p)]
        graph, _, _ = build_graph(records, settings)
        return query, graph, records

    return _load
