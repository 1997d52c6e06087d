import os
import random

import pytest

from src.core.errors import OracleSizeError
from src.core.hunter import Hunter
from src.core.oracle import brute_force_align, verify_alignment
from src.services.ingest_service import build_graph
from src.services.synthetic_service import random_instance

ORACLE_TRIALS = int(os.environ.get("PROVHUNT_ORACLE_TRIALS", "500"))


@pytest.mark.parametrize(
    "max_edges, max_entities, trials",
    [
        (6, 14, ORACLE_TRIALS),
        (4, 30, max(1, ORACLE_TRIALS // 5)),
    ],
)
def test_hunter_agrees_with_oracle_on_random_instances(max_edges, max_entities, trials):
    rng = random.Random(2024 + max_edges)
    for trial in range(trials):
        instance = random_instance(rng, max_edges=max_edges, max_entities=max_entities)
        graph, _, _ = build_graph(instance.records)
        oracle = brute_force_align(instance.query, graph)
        alerts = Hunter(instance.query).hunt(graph)

        assert {a.mapping_key(): a.score for a in alerts} == oracle.scores(), f"trial {trial}"
        for match in oracle.matches:
            assert verify_alignment(instance.query, graph, match.mapping, match.steps)


def test_planted_mapping_is_an_oracle_match():
    rng = random.Random(3)
    for _ in range(20):
        instance = random_instance(rng)
        graph, _, _ = build_graph(instance.records)
        oracle = brute_force_align(instance.query, graph)
        assert instance.planted in [m.mapping for m in oracle.matches]


def test_hop_budget(load_case):
    query, graph, _ = load_case("inject")
    (unbounded,) = brute_force_align(query, graph).matches
    assert unbounded.score == 2.5

    hunter = Hunter(query)
    hunter.hop_limited_mode(1)
    limited = brute_force_align(query, graph, budget=1)
    assert {a.mapping_key(): a.score for a in hunter.hunt(graph)} == limited.scores()


def test_verifier_rejects_reordered_steps(load_case):
    query, graph, _ = load_case("inject")
    (match,) = brute_force_align(query, graph).matches
    assert verify_alignment(query, graph, match.mapping, match.steps)
    assert not verify_alignment(query, graph, match.mapping, tuple(reversed(match.steps)))
    assert not verify_alignment(query, graph, match.mapping, match.steps[:-1])


def test_verifier_rejects_non_injective_mapping(load_case):
    query, graph, _ = load_case("inject")
    (match,) = brute_force_align(query, graph).matches
    mapping = dict(match.mapping, stage=match.mapping["secret"])
    assert not verify_alignment(query, graph, mapping, match.steps)


def test_size_cap(load_case):
    query, graph, _ = load_case("ztmp")
    with pytest.raises(OracleSizeError) as info:
        brute_force_align(query, graph, cap=5)
    assert info.value.exit_code == 1
    with pytest.raises(OracleSizeError):
        brute_force_align(query, graph, max_edges=2)
