"""
Provenance graph.

Events pass through a staging area before they become edges:

- an event older than (watermark - reorder window) is late and skipped;
- an event whose (t, seq) key was already seen is a replay and skipped;
- an admitted event is committed, in key order, once its timestamp falls
  below (watermark - 2 * window), or when the stream is flushed.

At commit time an event is dropped as a duplicate when the next event on the
same (subject, object) pair has the same op and lies within the window, so a
run of repeats collapses onto its latest member. Commits are append-only in
key order, which keeps every edge list sorted and makes the committed graph
independent of how the stream was cut into batches.
"""

import bisect
import heapq
import re
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional, Pattern

from src.config import DEFAULT_REORDER_WINDOW_US
from src.core.errors import EntityNotFoundError, LateEventError
from src.core.events import KEY_MIN, Entity, Event, EventKey, EventType
from src.core.tagging import EntityTag
from src.utils.log_utils import get_logger

logger = get_logger(__name__)

MAX_LATE_KEPT = 100


@dataclass
class IngestStats:
    received: int = 0
    accepted: int = 0
    deduplicated: int = 0
    skipped: int = 0
    late: int = 0
    replayed: int = 0
    undeclared: int = 0
    committed: int = 0
    committed_events: list[Event] = field(default_factory=list, repr=False)
    # error records of the first late events, for reports
    late_events: list[dict] = field(default_factory=list, repr=False)

    def merge(self, other: "IngestStats") -> None:
        for name in ("received", "accepted", "deduplicated", "skipped", "late", "replayed",
                     "undeclared", "committed"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.committed_events.extend(other.committed_events)
        self.late_events.extend(other.late_events[: MAX_LATE_KEPT - len(self.late_events)])

    def summary(self) -> dict[str, int]:
        return {
            "received": self.received,
            "accepted": self.accepted,
            "deduplicated": self.deduplicated,
            "skipped": self.skipped,
            "late": self.late,
            "replayed": self.replayed,
            "undeclared": self.undeclared,
            "committed": self.committed,
        }


class ProvenanceGraph:
    """Deduplicated, pruned provenance graph with candidate and neighborhood queries."""

    def __init__(self, reorder_window_us: int = DEFAULT_REORDER_WINDOW_US):
        self.reorder_window = reorder_window_us

        self.entities: dict[str, Entity] = {}
        self.out_edges: dict[str, list[Event]] = defaultdict(list)
        self.in_edges: dict[str, list[Event]] = defaultdict(list)
        self.name_index: dict[str, set[str]] = defaultdict(set)
        self.tag_index: dict[EntityTag, set[str]] = defaultdict(set)
        self.op_index: dict[EventType, list[Event]] = defaultdict(list)
        self.watermark: int = -1
        self.edge_count = 0
        self.pruned_total = 0
        self.totals = IngestStats()

        # every declaration ever seen; pruned entities come back from here
        self._catalog: dict[str, Entity] = {}
        self._fresh_entities: list[str] = []

        # staging
        self._heap: list[tuple[EventKey, Event]] = []
        self._pair_pending: dict[tuple[str, str], list[Event]] = {}
        self._buffered_refs: Counter[str] = Counter()
        self._seen_keys: set[EventKey] = set()
        self._seen_order: deque[EventKey] = deque()
        self._last_committed: EventKey = KEY_MIN

    # -------------------- Entities --------------------

    def declare(self, entities: Iterable[Entity]) -> int:
        """Register entity declarations; repeated declarations of a uid are ignored."""
        added = 0
        for entity in entities:
            self._catalog.setdefault(entity.uid, entity)
            if entity.uid not in self.entities:
                self._activate(self._catalog[entity.uid])
                added += 1
        return added

    def _activate(self, entity: Entity) -> None:
        self.entities[entity.uid] = entity
        self.name_index[entity.name].add(entity.uid)
        self.tag_index[entity.tag].add(entity.uid)
        self._fresh_entities.append(entity.uid)

    def _deactivate(self, uid: str) -> None:
        entity = self.entities.pop(uid)
        self.name_index[entity.name].discard(uid)
        if not self.name_index[entity.name]:
            del self.name_index[entity.name]
        self.tag_index[entity.tag].discard(uid)
        self.out_edges.pop(uid, None)
        self.in_edges.pop(uid, None)

    def drain_fresh_entities(self) -> list[str]:
        """Entity ids that became live since the previous drain."""
        fresh, self._fresh_entities = self._fresh_entities, []
        return [uid for uid in fresh if uid in self.entities]

    def entity(self, uid: str) -> Entity:
        try:
            return self.entities[uid]
        except KeyError:
            catalogued = self._catalog.get(uid)
            if catalogued is None:
                raise EntityNotFoundError(uid) from None
            return catalogued

    def degree(self, uid: str) -> int:
        return len(self.out_edges.get(uid, ())) + len(self.in_edges.get(uid, ()))

    # -------------------- Ingestion --------------------

    def ingest(self, events: Iterable[Event], *, flush: bool = False) -> IngestStats:
        """Stage a batch of events and commit everything that became final."""
        stats = IngestStats()
        for event in events:
            stats.received += 1
            self._admit(event, stats)
        self._commit(stats, flush=flush)

        if stats.skipped:
            logger.warning(
                f"Skipped {stats.skipped} events ({stats.late} late, {stats.replayed} replayed, "
                f"{stats.undeclared} undeclared)"
            )
        logger.debug(f"Ingest: {stats.summary()} buffered={len(self._heap)}")
        self.totals.merge(IngestStats(**{**stats.summary(), "late_events": stats.late_events}))
        return stats

    def flush(self) -> IngestStats:
        """Commit every staged event (end of stream)."""
        return self.ingest((), flush=True)

    @property
    def buffered(self) -> int:
        return len(self._heap)

    def _admit(self, event: Event, stats: IngestStats) -> None:
        key = event.key
        if key in self._seen_keys:
            stats.replayed += 1
            stats.skipped += 1
            return
        if key <= self._last_committed or (
            self.watermark >= 0 and event.t < self.watermark - self.reorder_window
        ):
            stats.late += 1
            stats.skipped += 1
            if len(stats.late_events) < MAX_LATE_KEPT:
                error = LateEventError(
                    f"Event ({event.t}, {event.seq}) arrived after its reorder window closed",
                    t=event.t,
                    seq=event.seq,
                    watermark=self.watermark,
                    reorder_window=self.reorder_window,
                )
                stats.late_events.append(error.to_record())
            return
        if event.uid_s not in self._catalog or event.uid_o not in self._catalog:
            stats.undeclared += 1
            stats.skipped += 1
            return

        stats.accepted += 1
        self._seen_keys.add(key)
        heapq.heappush(self._heap, (key, event))
        pending = self._pair_pending.setdefault((event.uid_s, event.uid_o), [])
        bisect.insort(pending, event, key=lambda e: e.key)
        self._buffered_refs[event.uid_s] += 1
        self._buffered_refs[event.uid_o] += 1
        if event.t > self.watermark:
            self.watermark = event.t

    def _commit(self, stats: IngestStats, *, flush: bool) -> None:
        horizon = self.watermark - 2 * self.reorder_window
        while self._heap and (flush or self._heap[0][1].t < horizon):
            key, event = heapq.heappop(self._heap)
            pair = (event.uid_s, event.uid_o)
            pending = self._pair_pending[pair]
            pending.pop(0)
            following = pending[0] if pending else None
            if not pending:
                del self._pair_pending[pair]
            self._release_refs(event)
            self._seen_order.append(key)

            if (
                following is not None
                and following.op is event.op
                and following.t - event.t <= self.reorder_window
            ):
                stats.deduplicated += 1
                continue

            self._append_edge(event)
            stats.committed += 1
            stats.committed_events.append(event)

        # keys older than the lateness bound can never be admitted again
        bound = self.watermark - self.reorder_window
        while self._seen_order and (flush or self._seen_order[0][0] < bound):
            if flush and self._seen_order[0][0] >= bound:
                break
            self._seen_keys.discard(self._seen_order.popleft())

    def _release_refs(self, event: Event) -> None:
        for uid in (event.uid_s, event.uid_o):
            self._buffered_refs[uid] -= 1
            if self._buffered_refs[uid] <= 0:
                del self._buffered_refs[uid]

    def _append_edge(self, event: Event) -> None:
        for uid in (event.uid_s, event.uid_o):
            if uid not in self.entities:
                self._activate(self._catalog[uid])
        self.out_edges[event.uid_s].append(event)
        self.in_edges[event.uid_o].append(event)
        self.op_index[event.op].append(event)
        self.edge_count += 1
        self._last_committed = event.key

    # -------------------- Pruning --------------------

    def prune_isolated(self) -> int:
        """Remove live entities that participate in no event (staged events count)."""
        isolated = [
            uid
            for uid in self.entities
            if self.degree(uid) == 0 and uid not in self._buffered_refs
        ]
        for uid in isolated:
            self._deactivate(uid)
        self.pruned_total += len(isolated)
        if isolated:
            logger.debug(f"Pruned {len(isolated)} isolated entities")
        return len(isolated)

    # -------------------- Queries --------------------

    def candidates(self, tag: EntityTag, name_pattern: Optional[str | Pattern[str]] = None) -> set[str]:
        """Entities carrying `tag` whose name matches the optional pattern."""
        ids = self.tag_index.get(tag, set())
        if name_pattern is None:
            return set(ids)
        pattern = re.compile(name_pattern) if isinstance(name_pattern, str) else name_pattern
        return {uid for uid in ids if pattern.search(self.entities[uid].name)}

    def events_between(
        self, node: str, direction: Literal["out", "in"], t_min: int
    ) -> list[Event]:
        """Events incident on `node` in one direction with t >= t_min, in key order."""
        if node not in self.entities:
            raise EntityNotFoundError(node)
        edges = (self.out_edges if direction == "out" else self.in_edges).get(node, [])
        start = bisect.bisect_left(edges, t_min, key=lambda e: e.t)
        return edges[start:]

    def edges_after(self, node: str, direction: Literal["out", "in"], after: EventKey) -> list[Event]:
        """Incident events with key strictly greater than `after`."""
        edges = (self.out_edges if direction == "out" else self.in_edges).get(node, [])
        start = bisect.bisect_right(edges, after, key=lambda e: e.key)
        return edges[start:]

    def ops_after(self, op: EventType, after: EventKey) -> list[Event]:
        """Committed events of one type with key strictly greater than `after`."""
        edges = self.op_index.get(op, [])
        start = bisect.bisect_right(edges, after, key=lambda e: e.key)
        return edges[start:]

    def all_events(self) -> list[Event]:
        """Every committed event in key order."""
        return sorted((e for edges in self.out_edges.values() for e in edges), key=lambda e: e.key)

    def summary(self) -> dict[str, int]:
        return {
            "nodes": len(self.entities),
            "edges": self.edge_count,
            "deduplicated": self.totals.deduplicated,
            "skipped": self.totals.skipped,
            "late": self.totals.late,
            "replayed": self.totals.replayed,
            "pruned": self.pruned_total,
            "buffered": self.buffered,
            "watermark": self.watermark,
        }
