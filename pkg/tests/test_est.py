import pytest

from src.core.errors import ConfigError, EntityNotFoundError
from src.core.est import POLICY_ROWS, est_frontier, load_policy_overrides, policy_applies, replay_chain
from src.core.events import KEY_MIN, Event, EventType
from src.core.hunter import path_score
from src.core.tagging import EntityTag
from tests.helpers import entity, graph_of

ENTITIES = [
    entity("pa", "process", "mal.exe"),
    entity("pb", "process", "svchost.exe"),
    entity("x", "file", "/home/u/x.exe"),
    entity("pc", "process", "x.exe"),
    entity("pd", "process", "child"),
    entity("doc", "file", "/home/u/report.docx"),
    entity("net", "socket", "10.1.1.1:80"),
]

# inject, write payload, payload read, create
CHAIN = [
    ("pa", "pb", "inject", 10),
    ("pb", "x", "write", 20),
    ("pc", "x", "read", 30),
    ("pc", "pd", "create", 40),
]


def test_four_hop_chain():
    graph = graph_of(ENTITIES, CHAIN)
    frontier = est_frontier(graph, "pa")
    chain = frontier.best_chain("pd")
    assert chain.nodes == ("pa", "pb", "x", "pc", "pd")
    assert chain.hops == 4
    assert path_score(chain) == pytest.approx(0.2)
    assert replay_chain(graph, chain)


def test_budget_cuts_the_chain():
    graph = graph_of(ENTITIES, CHAIN)
    frontier = est_frontier(graph, "pa", budget=3)
    assert "pc" in frontier
    assert "pd" not in frontier


def test_chain_must_move_forward_in_time():
    # the payload is read before it is written
    graph = graph_of(
        ENTITIES,
        [("pa", "pb", "inject", 10), ("pc", "x", "read", 15), ("pb", "x", "write", 20)],
    )
    frontier = est_frontier(graph, "pa")
    assert "x" in frontier
    assert "pc" not in frontier


def test_frontier_starts_after_the_given_key():
    graph = graph_of(ENTITIES, CHAIN)
    frontier = est_frontier(graph, "pa", after=(10, 0))
    assert frontier.entities() == {"pa"}


def test_sockets_and_exit_do_not_carry_labels():
    graph = graph_of(
        ENTITIES,
        [("pa", "net", "connect", 1), ("pa", "pa", "exit", 2), ("pa", "x", "unlink", 3)],
    )
    assert est_frontier(graph, "pa").entities() == {"pa"}


def test_execute_needs_an_executable_or_library():
    graph = graph_of(
        ENTITIES,
        [("pa", "doc", "write", 1), ("pb", "doc", "execute", 2), ("pa", "x", "write", 3), ("pc", "x", "execute", 4)],
    )
    reached = est_frontier(graph, "pa").entities()
    assert "doc" in reached and "pb" not in reached
    assert "pc" in reached


def test_disabled_rows():
    graph = graph_of(ENTITIES, CHAIN)
    assert "pb" not in est_frontier(graph, "pa", disabled=frozenset({"2"}))
    reached = est_frontier(graph, "pa", disabled=frozenset({"5"}))
    assert "x" in reached and "pc" not in reached


def test_fewer_hops_win_over_earlier_arrival():
    # pd is reachable directly at t=50 and through pb at t=12
    graph = graph_of(
        ENTITIES,
        [("pa", "pb", "fork", 10), ("pb", "pd", "fork", 12), ("pa", "pd", "fork", 50)],
    )
    frontier = est_frontier(graph, "pa")
    assert frontier.best_chain("pd").hops == 1
    # before t=50 only the two-hop arrival exists
    early = frontier.chain_before("pd", (20, 0))
    assert early.hops == 2
    assert frontier.chain_before("pd", (11, 0)) is None


def test_replay_rejects_out_of_order_chain():
    graph = graph_of(ENTITIES, CHAIN)
    chain = est_frontier(graph, "pa").best_chain("pd")
    assert not replay_chain(graph, chain, after=(25, 0))


def test_unknown_start():
    graph = graph_of(ENTITIES, CHAIN)
    with pytest.raises(EntityNotFoundError):
        est_frontier(graph, "ghost", KEY_MIN)


def test_override_file(fixtures_dir, tmp_path):
    assert load_policy_overrides(fixtures_dir / "est_disable_all.json") == POLICY_ROWS
    some = tmp_path / "some.json"
    some.write_text('{"disabled": ["1a", "4"]}', encoding="utf-8")
    assert load_policy_overrides(some) == frozenset({"1a", "4"})
    bad = tmp_path / "bad.json"
    bad.write_text('{"disabled": ["9"]}', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_policy_overrides(bad)


@pytest.mark.parametrize(
    "event, labeled, tag, expected",
    [
        (Event("pa", "pb", EventType.INJECT, 1, 0), True, EntityTag.P, True),
        (Event("pa", "pb", EventType.INJECT, 1, 0), False, EntityTag.P, False),
        (Event("pa", "net", EventType.CONNECT, 1, 0), True, EntityTag.S, False),
        (Event("pb", "doc", EventType.EXECUTE, 1, 0), True, EntityTag.FG, False),
        (Event("pc", "x", EventType.EXECUTE, 1, 0), True, EntityTag.FE, True),
    ],
)
def test_policy_applies(event, labeled, tag, expected):
    assert policy_applies(event, labeled, tag) is expected
