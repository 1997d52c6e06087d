"""
Equivalent-semantic-transfer (EST) policies and the reachable frontier.

A suspicious label moves along an event when the event matches one policy row
and the label sits on the row's source side:

    1a  P -> P  fork
    1b  P -> P  create, clone
    2   P -> P  inject
    3   P -> F  write
    4   F -> P  execute, load   (file tag Fd or Fe only)
    5   F -> P  read

Sockets and registry keys never carry labels. Exit and unlink never move them.

The frontier is computed breadth-first by hop count. For every entity it keeps
the arrivals that are Pareto-optimal in (hops, arrival key): a later layer only
records an arrival that is strictly earlier than every arrival with fewer hops.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from pydantic import BaseModel, ValidationError

from src.core.errors import ConfigError, EntityNotFoundError
from src.core.events import KEY_MIN, Direction, Event, EventKey, EventType
from src.core.tagging import EntityKind, EntityTag
from src.utils.log_utils import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, slots=True)
class EstPolicy:
    """One transfer row. `direction` is forward when the label flows subject -> object."""

    row: str
    subject_kind: EntityKind
    object_kind: EntityKind
    direction: Direction
    op_set: frozenset[EventType]
    object_tag_constraint: Optional[frozenset[EntityTag]] = None

    def matches(self, ev: Event, object_tag: EntityTag) -> bool:
        if ev.op not in self.op_set:
            return False
        file_side = self.object_kind if self.direction is Direction.FORWARD else self.subject_kind
        if file_side is EntityKind.FILE and not object_tag.is_file:
            return False
        if self.object_tag_constraint is not None and object_tag not in self.object_tag_constraint:
            return False
        return True


_P, _F = EntityKind.PROCESS, EntityKind.FILE

EST_POLICIES: tuple[EstPolicy, ...] = (
    EstPolicy("1a", _P, _P, Direction.FORWARD, frozenset({EventType.FORK})),
    EstPolicy("1b", _P, _P, Direction.FORWARD, frozenset({EventType.CREATE, EventType.CLONE})),
    EstPolicy("2", _P, _P, Direction.FORWARD, frozenset({EventType.INJECT})),
    EstPolicy("3", _P, _F, Direction.FORWARD, frozenset({EventType.WRITE})),
    EstPolicy(
        "4", _F, _P, Direction.BACKWARD, frozenset({EventType.EXECUTE, EventType.LOAD}),
        frozenset({EntityTag.FD, EntityTag.FE}),
    ),
    EstPolicy("5", _F, _P, Direction.BACKWARD, frozenset({EventType.READ})),
)

POLICY_ROWS = frozenset(p.row for p in EST_POLICIES)

# ops whose label moves from the event subject to the event object
_SUBJECT_SOURCED = frozenset(
    op for p in EST_POLICIES if p.direction is Direction.FORWARD for op in p.op_set
)
# ops whose label moves from the event object (a file) back to the acting process
_OBJECT_SOURCED = frozenset(
    op for p in EST_POLICIES if p.direction is Direction.BACKWARD for op in p.op_set
)


def matching_policy(
    ev: Event, object_tag: EntityTag, disabled: frozenset[str] = frozenset()
) -> Optional[EstPolicy]:
    for policy in EST_POLICIES:
        if policy.row not in disabled and policy.matches(ev, object_tag):
            return policy
    return None


def policy_applies(
    ev: Event,
    source_has_label: bool,
    object_tag: EntityTag,
    disabled: frozenset[str] = frozenset(),
) -> bool:
    """True iff `ev` matches an enabled row and the row's source side is labeled."""
    return source_has_label and matching_policy(ev, object_tag, disabled) is not None


def label_target(ev: Event, policy: EstPolicy) -> tuple[str, str]:
    """(source, target) entity ids of a policy-satisfying event."""
    if policy.direction is Direction.FORWARD:
        return ev.uid_s, ev.uid_o
    return ev.uid_o, ev.uid_s


class PolicyOverride(BaseModel):
    disabled: list[str] = []


def load_policy_overrides(path: str | Path) -> frozenset[str]:
    """Read `{"disabled": [...]}`; "all" disables every row."""
    try:
        override = PolicyOverride.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise ConfigError(f"Invalid EST override file {path}: {e}", path=str(path)) from e

    if "all" in override.disabled:
        return POLICY_ROWS
    unknown = sorted(set(override.disabled) - POLICY_ROWS)
    if unknown:
        raise ConfigError(f"Unknown EST policy rows: {', '.join(unknown)}", path=str(path))
    return frozenset(override.disabled)


# -------------------- Chains and frontier --------------------


@dataclass(frozen=True, slots=True)
class EstChain:
    nodes: tuple[str, ...]
    events: tuple[Event, ...] = ()

    @property
    def hops(self) -> int:
        return len(self.events)

    @property
    def t_last(self) -> Optional[int]:
        return self.events[-1].t if self.events else None

    @property
    def last_key(self) -> Optional[EventKey]:
        return self.events[-1].key if self.events else None

    @property
    def end(self) -> str:
        return self.nodes[-1]

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, data: dict) -> "EstChain":
        return cls(tuple(data["nodes"]), tuple(Event.from_dict(e) for e in data["events"]))

    @classmethod
    def direct(cls, entity: str) -> "EstChain":
        return cls((entity,))


@dataclass(frozen=True, slots=True)
class _Arrival:
    entity: str
    hops: int
    key: EventKey
    event: Optional[Event]
    prev: Optional["_Arrival"]

    def chain(self) -> EstChain:
        nodes: list[str] = []
        events: list[Event] = []
        arrival: Optional[_Arrival] = self
        while arrival is not None:
            nodes.append(arrival.entity)
            if arrival.event is not None:
                events.append(arrival.event)
            arrival = arrival.prev
        return EstChain(tuple(reversed(nodes)), tuple(reversed(events)))


class EstFrontier:
    """Entities reachable from one labeled start, with their Pareto arrivals."""

    def __init__(self, start: str, after: EventKey, budget: Optional[int]):
        self.start = start
        self.after = after
        self.budget = budget
        # per entity, arrivals by increasing hops and strictly decreasing key
        self._arrivals: dict[str, list[_Arrival]] = {start: [_Arrival(start, 0, after, None, None)]}

    def __contains__(self, entity: str) -> bool:
        return entity in self._arrivals

    def __len__(self) -> int:
        return len(self._arrivals)

    def entities(self) -> set[str]:
        return set(self._arrivals)

    def chain_before(self, entity: str, key: EventKey) -> Optional[EstChain]:
        """Fewest-hop chain to `entity` whose last event precedes `key`."""
        for arrival in self._arrivals.get(entity, ()):
            if arrival.key < key:
                return arrival.chain()
        return None

    def best_chain(self, entity: str) -> Optional[EstChain]:
        arrivals = self._arrivals.get(entity)
        return arrivals[0].chain() if arrivals else None

    def items(self) -> Iterator[tuple[str, EstChain]]:
        """(entity, minimal-hop chain) pairs; ties resolved by earliest last event."""
        for entity, arrivals in self._arrivals.items():
            yield entity, arrivals[0].chain()

    def earliest_key(self, entity: str) -> Optional[EventKey]:
        arrivals = self._arrivals.get(entity)
        return arrivals[-1].key if arrivals else None

    def _offer(self, arrival: _Arrival) -> bool:
        arrivals = self._arrivals.setdefault(arrival.entity, [])
        if arrivals and arrivals[-1].key <= arrival.key:
            return False
        if arrivals and arrivals[-1].hops == arrival.hops:
            arrivals[-1] = arrival
        else:
            arrivals.append(arrival)
        return True


def _propagation_steps(graph, arrival: _Arrival, disabled: frozenset[str]) -> Iterable[tuple[str, Event]]:
    """(target, event) pairs that carry the label out of `arrival.entity`."""
    entity = graph.entity(arrival.entity)
    if entity.kind is EntityKind.PROCESS:
        for ev in graph.edges_after(arrival.entity, "out", arrival.key):
            if ev.op not in _SUBJECT_SOURCED or ev.uid_o == ev.uid_s:
                continue
            if matching_policy(ev, graph.entity(ev.uid_o).tag, disabled) is not None:
                yield ev.uid_o, ev
    elif entity.kind is EntityKind.FILE:
        for ev in graph.edges_after(arrival.entity, "in", arrival.key):
            if ev.op not in _OBJECT_SOURCED:
                continue
            if matching_policy(ev, entity.tag, disabled) is not None:
                yield ev.uid_s, ev


def est_frontier(
    graph,
    start: str,
    after: EventKey = KEY_MIN,
    budget: Optional[int] = None,
    disabled: frozenset[str] = frozenset(),
) -> EstFrontier:
    """
    Everything EST-reachable from `start` through events keyed after `after`.

    Each chain is strictly increasing in (t, seq). A finite `budget` caps the
    hop count (the hop-limited baseline).
    """
    if start not in graph.entities:
        raise EntityNotFoundError(start)

    frontier = EstFrontier(start, after, budget)
    layer = [frontier._arrivals[start][0]]
    hops = 0
    while layer and (budget is None or hops < budget):
        hops += 1
        best: dict[str, _Arrival] = {}
        for arrival in layer:
            for target, ev in _propagation_steps(graph, arrival, disabled):
                current = best.get(target)
                if current is None or ev.key < current.key:
                    best[target] = _Arrival(target, hops, ev.key, ev, arrival)
        layer = [arrival for arrival in best.values() if frontier._offer(arrival)]

    logger.debug(f"EST frontier of {start}: {len(frontier)} entities, {hops} layers")
    return frontier


def replay_chain(
    graph,
    chain: EstChain,
    after: EventKey = KEY_MIN,
    disabled: frozenset[str] = frozenset(),
) -> bool:
    """Check a chain hop by hop: each event is policy-satisfying, links the
    consecutive chain nodes from a labeled source, and is keyed after its predecessor."""
    if len(chain.nodes) != len(chain.events) + 1:
        return False
    labeled = {chain.nodes[0]}
    previous = after
    for i, ev in enumerate(chain.events):
        if ev.key <= previous:
            return False
        policy = matching_policy(ev, graph.entity(ev.uid_o).tag, disabled)
        if policy is None:
            return False
        source, target = label_target(ev, policy)
        if source != chain.nodes[i] or target != chain.nodes[i + 1]:
            return False
        if not policy_applies(ev, source in labeled, graph.entity(ev.uid_o).tag, disabled):
            return False
        labeled.add(target)
        previous = ev.key
    return True
