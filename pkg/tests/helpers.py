"""Small builders shared by the test modules."""

import json

from src.core.events import Entity, Event, EventType
from src.core.provenance import ProvenanceGraph
from src.core.tagging import EntityKind, classify_entity


def entity(uid: str, kind: str, name: str) -> Entity:
    k = EntityKind(kind)
    return Entity(uid, k, name, classify_entity(k, name))


def record_line(t: int, s: tuple[str, str, str], o: tuple[str, str, str], op: str, **extra) -> str:
    """One record line; s and o are (uid, kind, name)."""
    body = {
        "t": t,
        "s": s[0],
        "s_kind": s[1],
        "s_name": s[2],
        "o": o[0],
        "o_kind": o[1],
        "o_name": o[2],
        "op": op,
        **extra,
    }
    return json.dumps(body)


def graph_of(entities: list[Entity], events: list[tuple[str, str, str, int]], window: int = 0) -> ProvenanceGraph:
    """Committed graph from (s, o, op, t) tuples; seq follows list order."""
    graph = ProvenanceGraph(reorder_window_us=window)
    graph.declare(entities)
    graph.ingest(
        [Event(s, o, EventType(op), t, seq) for seq, (s, o, op, t) in enumerate(events)], flush=True
    )
    return graph


def mappings(alerts) -> list[tuple[dict, float]]:
    return [(a.mapping, a.score) for a in alerts]
