"""
Event and entity vocabulary.

An audit record becomes an Event (subject, object, op, timestamp, sequence
number) plus Entity declarations for uids seen for the first time.
Records are JSON objects, one per line:

    {"t": 100, "seq": 7, "s": "p1", "s_kind": "process", "s_name": "bash",
     "o": "f1", "o_kind": "file", "o_name": "/etc/passwd", "op": "write"}
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from src.core.errors import RecordParseError, UnsupportedEventError
from src.core.tagging import EntityKind, EntityTag, TagRuleSet, classify_entity

EventKey = tuple[int, int]

# Sorts before every real event; used as "no lower bound".
KEY_MIN: EventKey = (-1, -1)


class EventType(str, Enum):
    ACCEPT = "accept"
    INJECT = "inject"
    CLONE = "clone"
    CONNECT = "connect"
    EXECUTE = "execute"
    FORK = "fork"
    LOAD = "load"
    WRITE = "write"
    RECEIVE = "receive"
    SEND = "send"
    EXIT = "exit"
    UNLINK = "unlink"
    # not in the classification table, but named by the transfer policies
    READ = "read"
    CREATE = "create"


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True, slots=True)
class EventSpec:
    subject_kind: EntityKind
    object_kinds: frozenset[EntityKind]
    direction: Direction


_P = EntityKind.PROCESS
_F = EntityKind.FILE
_S = EntityKind.SOCKET
_R = EntityKind.REGISTRY


def _spec(obj: EntityKind, direction: Direction, *extra: EntityKind) -> EventSpec:
    return EventSpec(_P, frozenset((obj, *extra)), direction)


EVENT_TABLE: dict[EventType, EventSpec] = {
    EventType.ACCEPT: _spec(_S, Direction.BACKWARD),
    EventType.INJECT: _spec(_P, Direction.FORWARD),
    EventType.CLONE: _spec(_P, Direction.FORWARD),
    EventType.CONNECT: _spec(_S, Direction.FORWARD),
    EventType.EXECUTE: _spec(_F, Direction.FORWARD),
    EventType.FORK: _spec(_P, Direction.FORWARD),
    EventType.LOAD: _spec(_F, Direction.BACKWARD),
    EventType.WRITE: _spec(_F, Direction.FORWARD, _R),
    EventType.RECEIVE: _spec(_S, Direction.BACKWARD),
    EventType.SEND: _spec(_S, Direction.FORWARD),
    EventType.EXIT: _spec(_P, Direction.FORWARD),
    EventType.UNLINK: _spec(_F, Direction.FORWARD),
    EventType.READ: _spec(_F, Direction.BACKWARD, _R),
    EventType.CREATE: _spec(_P, Direction.FORWARD),
}

CLASSIFICATION_TABLE_OPS = tuple(op for op in EventType if op not in (EventType.READ, EventType.CREATE))


def event_direction(op: EventType) -> Direction:
    """Information-flow direction of an event type."""
    return EVENT_TABLE[op].direction


@dataclass(frozen=True, slots=True)
class Event:
    uid_s: str
    uid_o: str
    op: EventType
    t: int
    seq: int = 0

    @property
    def key(self) -> EventKey:
        return (self.t, self.seq)

    @property
    def direction(self) -> Direction:
        return EVENT_TABLE[self.op].direction

    def to_dict(self) -> dict[str, Any]:
        return {"s": self.uid_s, "o": self.uid_o, "op": self.op.value, "t": self.t, "seq": self.seq}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Event":
        return cls(data["s"], data["o"], EventType(data["op"]), int(data["t"]), int(data["seq"]))


@dataclass(slots=True)
class Entity:
    uid: str
    kind: EntityKind
    name: str
    tag: EntityTag
    attrs: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"uid": self.uid, "kind": self.kind.value, "name": self.name, "tag": self.tag.value}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Entity":
        return cls(data["uid"], EntityKind(data["kind"]), data["name"], EntityTag(data["tag"]))


@dataclass(slots=True)
class ParsedRecord:
    event: Event
    entities: list[Entity]


_REQUIRED_TEXT = ("s", "s_kind", "s_name", "o", "o_kind", "o_name", "op")


def _require_text(record: dict, name: str, line_no: Optional[int]) -> str:
    value = record.get(name)
    if not isinstance(value, str) or not value:
        raise RecordParseError(f"Field '{name}' must be a non-empty string", line_no, name)
    return value


def _require_kind(record: dict, name: str, line_no: Optional[int]) -> EntityKind:
    value = _require_text(record, name, line_no)
    try:
        return EntityKind(value)
    except ValueError:
        raise RecordParseError(f"Unknown entity kind '{value}'", line_no, name) from None


def parse_event(
    line: str,
    *,
    line_no: Optional[int] = None,
    rules: Optional[TagRuleSet] = None,
    seen: Optional[set[str]] = None,
    seq: Optional[int] = None,
) -> ParsedRecord:
    """
    Parse one record line into an Event plus declarations of unseen uids.

    `seen` is updated in place; without it both endpoints are declared.
    An explicit "seq" field in the record wins over the `seq` argument.
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordParseError(f"Record is not valid JSON: {e.msg}", line_no, None) from None
    if not isinstance(record, dict):
        raise RecordParseError("Record must be a JSON object", line_no, None)

    t = record.get("t")
    if isinstance(t, bool) or not isinstance(t, int) or t < 0:
        raise RecordParseError("Field 't' must be a non-negative integer", line_no, "t")

    for name in _REQUIRED_TEXT:
        _require_text(record, name, line_no)

    op_name = record["op"]
    try:
        op = EventType(op_name)
    except ValueError:
        raise UnsupportedEventError(f"Unsupported event type '{op_name}'", line_no, op_name) from None

    s_kind = _require_kind(record, "s_kind", line_no)
    o_kind = _require_kind(record, "o_kind", line_no)
    spec = EVENT_TABLE[op]
    if s_kind is not spec.subject_kind or o_kind not in spec.object_kinds:
        raise UnsupportedEventError(
            f"'{op.value}' does not apply to {s_kind.value} -> {o_kind.value}", line_no, op.value
        )

    uid_s, uid_o = record["s"], record["o"]
    if uid_s == uid_o and op is not EventType.EXIT:
        raise RecordParseError("Subject and object must differ unless op is 'exit'", line_no, "o")

    raw_seq = record.get("seq", seq if seq is not None else 0)
    if isinstance(raw_seq, bool) or not isinstance(raw_seq, int) or raw_seq < 0:
        raise RecordParseError("Field 'seq' must be a non-negative integer", line_no, "seq")

    event = Event(uid_s, uid_o, op, t, raw_seq)

    entities: list[Entity] = []
    for uid, kind, name in ((uid_s, s_kind, record["s_name"]), (uid_o, o_kind, record["o_name"])):
        if seen is not None:
            if uid in seen:
                continue
            seen.add(uid)
        if any(e.uid == uid for e in entities):
            continue
        entities.append(Entity(uid, kind, name, classify_entity(kind, name, rules)))

    return ParsedRecord(event, entities)


def serialize_event(event: Event, subject: Entity, obj: Entity) -> str:
    """Canonical record line for an event and its endpoint entities."""
    return json.dumps(
        {
            "t": event.t,
            "seq": event.seq,
            "s": event.uid_s,
            "s_kind": subject.kind.value,
            "s_name": subject.name,
            "o": event.uid_o,
            "o_kind": obj.kind.value,
            "o_name": obj.name,
            "op": event.op.value,
        },
        ensure_ascii=False,
    )
