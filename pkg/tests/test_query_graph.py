import os
import random

import pytest

from src.core.errors import QueryValidationError
from src.core.events import EventType
from src.core.query_graph import (
    extract_sequence,
    load_query,
    load_query_file,
    merge_analogous,
    serialize,
)
from src.services.synthetic_service import random_query

MERGE_TRIALS = int(os.environ.get("PROVHUNT_MERGE_TRIALS", "1000"))


def doc(nodes, edges, qid="q"):
    return {
        "id": qid,
        "nodes": [{"qid": n, "tag": t, **({"name_pattern": p} if p else {})} for n, t, p in nodes],
        "edges": [{"src": s, "dst": d, "op": op, "step": step} for s, d, op, step in edges],
    }


def test_load_fixture(fixtures_dir):
    query = load_query_file(fixtures_dir / "ztmp_query.json")
    assert query.id == "ztmp_dropper"
    assert len(query) == 6
    assert [e.op for e in query.sequence] == [
        EventType.WRITE,
        EventType.EXECUTE,
        EventType.FORK,
        EventType.CONNECT,
        EventType.READ,
        EventType.UNLINK,
    ]
    read = query.sequence[4]
    # backward edge: information flows from the file into the process
    assert (read.src, read.dst) == ("portscan", "ztmp_proc")
    assert (read.subject, read.object) == ("ztmp_proc", "portscan")
    assert query.node("ztmp_proc").regex.search("ztmp")


def test_flows(fixtures_dir):
    query = load_query_file(fixtures_dir / "ztmp_query.json")
    flow = query.flows["ztmp_proc"]
    assert (EventType.FORK, "firefox") in flow.inbound
    assert (EventType.READ, "portscan") in flow.inbound
    assert flow.degree == 4


@pytest.mark.parametrize(
    "nodes, edges",
    [
        # write into a socket
        ([("p", "P", None), ("s", "S", None)], [("p", "s", "write", 1)]),
        # read written the forward way round
        ([("p", "P", None), ("f", "Fa", None)], [("p", "f", "read", 1)]),
        # unknown node
        ([("p", "P", None)], [("p", "ghost", "fork", 1)]),
        # self loop other than exit
        ([("p", "P", None)], [("p", "p", "fork", 1)]),
        # disconnected
        (
            [("p", "P", None), ("f", "Ff", None), ("q", "P", None), ("g", "Ff", None)],
            [("p", "f", "write", 1), ("q", "g", "write", 2)],
        ),
        # node without edges
        ([("p", "P", None), ("f", "Ff", None), ("x", "Fg", None)], [("p", "f", "write", 1)]),
        # no edges at all
        ([("p", "P", None)], []),
        # bad regex
        ([("p", "P", "(unclosed"), ("f", "Ff", None)], [("p", "f", "write", 1)]),
    ],
)
def test_invalid_queries(nodes, edges):
    with pytest.raises(QueryValidationError):
        load_query(doc(nodes, edges))


def test_unknown_tag_and_duplicate_node():
    with pytest.raises(QueryValidationError):
        load_query(doc([("p", "X", None), ("f", "Ff", None)], [("p", "f", "write", 1)]))
    with pytest.raises(QueryValidationError):
        load_query(doc([("p", "P", None), ("p", "P", None), ("f", "Ff", None)], [("p", "f", "write", 1)]))


def test_exit_self_loop_is_allowed():
    query = load_query(doc([("p", "P", None)], [("p", "p", "exit", 1)]))
    assert len(query) == 1


def test_tied_steps_follow_forward_topology():
    query = load_query(
        doc(
            [("p", "P", None), ("c", "P", None), ("f", "Ff", None)],
            [("c", "f", "write", 1), ("p", "c", "fork", 1)],
        )
    )
    assert [e.op for e in extract_sequence(query)] == [EventType.FORK, EventType.WRITE]


def test_tied_steps_keep_input_order_for_backward_edges():
    query = load_query(
        doc(
            [("p", "P", None), ("a", "Fa", None), ("b", "Fb", None)],
            [("b", "p", "read", 2), ("a", "p", "read", 2)],
        )
    )
    assert [e.src for e in query.sequence] == ["b", "a"]


def test_merge_collapses_analogous_sources():
    query = load_query(
        doc(
            [("p", "P", None), ("s1", "Fa", "passwd"), ("s2", "Fa", "shadow"), ("out", "S", None)],
            [("s1", "p", "read", 1), ("s2", "p", "read", 2), ("p", "out", "send", 3)],
        )
    )
    merged = merge_analogous(query)
    assert set(merged.nodes) == {"p", "s1", "out"}
    node = merged.node("s1")
    assert node.merged_from == ("s1", "s2")
    assert node.regex.search("/etc/shadow")
    assert node.regex.search("/etc/passwd")
    assert [(e.src, e.op, e.step) for e in merged.sequence] == [
        ("s1", EventType.READ, 1),
        ("p", EventType.SEND, 3),
    ]


def test_merge_leaves_adjacent_members_alone():
    query = load_query(
        doc(
            [("a", "P", None), ("b", "P", None)],
            [("a", "b", "fork", 1), ("b", "a", "fork", 2)],
        )
    )
    assert merge_analogous(query) is query


def test_merge_drops_pattern_when_a_member_has_none():
    query = load_query(
        doc(
            [("p", "P", None), ("s1", "Fa", "passwd"), ("s2", "Fa", None)],
            [("s1", "p", "read", 1), ("s2", "p", "read", 1)],
        )
    )
    merged = merge_analogous(query)
    assert merged.node("s1").name_pattern is None


def test_serialize_reloads_equal(fixtures_dir):
    query = load_query_file(fixtures_dir / "fanout_query.json")
    assert load_query(serialize(query)) == query


def test_merge_is_idempotent_on_random_queries():
    rng = random.Random(20240601)
    for _ in range(MERGE_TRIALS):
        query = random_query(rng, rng.randint(1, 8), reuse=0.5)
        once = merge_analogous(query)
        twice = merge_analogous(once)
        assert twice == once
        assert len(once.edges) <= len(query.edges)
        assert len(once.nodes) <= len(query.nodes)
        covered = {member for node in once.nodes.values() for member in node.merged_from}
        assert covered == set(query.nodes)
