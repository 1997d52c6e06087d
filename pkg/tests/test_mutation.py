import pytest

from src.config import EngineSettings
from src.core.errors import MutationError
from src.core.est import POLICY_ROWS
from src.core.events import EventType
from src.services.hunting_service import hunt_snapshot
from src.services.ingest_service import build_graph
from src.services.metrics_service import GroundTruth, alert_nodes, compute_metrics
from src.services.mutation_service import EventLog, MutationSpec, mutate
from src.services.synthetic_service import labeled_scenario


@pytest.fixture
def scenario():
    return labeled_scenario(seed=0)


def hunt(instance, log: EventLog, settings: EngineSettings | None = None):
    graph, _, _ = build_graph(log.to_records())
    return hunt_snapshot([instance.query], graph, settings)


def run(instance, strategy: str, percent: float, seed: int = 1):
    log = EventLog.from_records(instance.records)
    return mutate(log, instance.attack_nodes, MutationSpec(strategy=strategy, percent=percent, seed=seed))


def test_unmutated_scenario_is_detected(scenario):
    log = EventLog.from_records(scenario.records)
    (alert,) = hunt(scenario, log)
    assert alert.mapping == scenario.planted
    assert alert.score == 6.0


@pytest.mark.parametrize("percent, inserted", [(0.25, 1), (0.5, 2), (1.0, 5), (2.0, 10)])
def test_reroute_budget(scenario, percent, inserted):
    result = run(scenario, "II", percent)
    assert result.manifest.budget == inserted
    assert len(result.manifest.inserted_nodes) == inserted
    assert len(result.manifest.rerouted) == 1
    assert result.manifest.rerouted[0]["original"]["op"] == "execute"


@pytest.mark.parametrize("percent", [0.25, 0.5, 1.0, 2.0])
def test_unbounded_search_sees_through_reroutes(scenario, percent):
    result = run(scenario, "II", percent)
    (alert,) = hunt(scenario, result.log)
    assert alert.mapping == scenario.planted
    hops = result.manifest.budget
    assert alert.score == pytest.approx(5 + 1 / (hops + 1), abs=1e-6)


@pytest.mark.parametrize("percent, detected", [(0.25, True), (0.5, True), (1.0, False), (2.0, False)])
def test_hop_limited_search_loses_long_reroutes(scenario, percent, detected):
    result = run(scenario, "II", percent)
    alerts = hunt(scenario, result.log, EngineSettings().hop_limited(3))
    assert bool(alerts) is detected


def test_disabling_transfer_policies_loses_a_single_reroute(scenario):
    result = run(scenario, "II", 0.25)
    assert hunt(scenario, result.log, EngineSettings(disabled_policies=POLICY_ROWS)) == []
    # the untouched scenario needs no transfer at all
    plain = EventLog.from_records(scenario.records)
    assert len(hunt(scenario, plain, EngineSettings(disabled_policies=POLICY_ROWS))) == 1


def test_chain_insertion_leaves_detection_alone(scenario):
    original = EventLog.from_records(scenario.records)
    result = run(scenario, "I", 1.0)
    assert len(result.log.events) == len(original.events) + 5
    assert result.manifest.rerouted == []
    (alert,) = hunt(scenario, result.log)
    assert alert.score == 6.0


def test_network_reroutes(scenario):
    result = run(scenario, "III", 0.4)
    assert {r["original"]["op"] for r in result.manifest.rerouted} == {"connect", "send"}
    (alert,) = hunt(scenario, result.log)
    assert alert.score == pytest.approx(5.0)


def test_all_splits_the_budget(scenario):
    result = run(scenario, "ALL", 0.6)
    assert result.manifest.per_template == {"I": 1, "II": 1, "III": 1}
    assert len(result.manifest.inserted_nodes) == 3


def test_all_gives_the_remainder_to_earlier_templates(scenario):
    result = run(scenario, "ALL", 1.0)
    assert result.manifest.per_template == {"I": 2, "II": 2, "III": 1}


def test_zero_percent_is_a_copy(scenario):
    original = EventLog.from_records(scenario.records)
    result = run(scenario, "II", 0.0)
    assert result.manifest.budget == 0
    assert result.log.to_lines() == original.to_lines()


def test_original_events_keep_their_order(scenario):
    original = EventLog.from_records(scenario.records)
    result = run(scenario, "ALL", 2.0)
    keys = [e.key for e in result.log.events]
    assert keys == sorted(keys)
    assert [e.seq for e in result.log.events] == list(range(len(result.log.events)))

    inserted = set(result.manifest.inserted_nodes)
    kept = [
        (e.t, e.op, e.uid_o)
        for e in result.log.events
        if e.uid_s not in inserted and e.uid_o not in inserted
    ]
    rerouted = {(r["original"]["t"], r["original"]["op"]) for r in result.manifest.rerouted}
    expected = [
        (e.t, e.op, e.uid_o)
        for e in original.events
        if (e.t, e.op.value) not in rerouted
    ]
    assert kept == expected


def test_inserted_events_sit_between_attack_events(scenario):
    result = run(scenario, "II", 1.0)
    inserted = set(result.manifest.inserted_nodes)
    forks = [e for e in result.log.events if e.op is EventType.FORK and e.uid_o in inserted]
    assert len(forks) == 5
    assert all(300_000_000 < e.t < 400_000_000 for e in forks)


def test_same_seed_same_output(scenario):
    a = run(scenario, "ALL", 1.0, seed=4)
    b = run(scenario, "ALL", 1.0, seed=4)
    assert a.log.to_lines() == b.log.to_lines()
    assert a.manifest == b.manifest


def test_inserted_nodes_do_not_count_against_precision(scenario):
    result = run(scenario, "II", 1.0)
    alerts = hunt(scenario, result.log)
    truth = GroundTruth(attack=scenario.attack_nodes, benign=set(result.manifest.inserted_nodes))
    report = compute_metrics(alert_nodes(alerts), truth)
    assert (report.recall, report.precision) == (100.0, 100.0)


def test_empty_attack_set(scenario):
    log = EventLog.from_records(scenario.records)
    with pytest.raises(MutationError):
        mutate(log, set(), MutationSpec(strategy="I", percent=1.0))


def test_missing_anchor_is_reported(scenario):
    log = EventLog.from_records(scenario.records)
    log.events = [e for e in log.events if e.op is not EventType.EXECUTE]
    with pytest.raises(MutationError) as info:
        mutate(log, scenario.attack_nodes, MutationSpec(strategy="II", percent=1.0))
    assert info.value.strategy == "II"
