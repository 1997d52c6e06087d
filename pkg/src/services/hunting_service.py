"""
Incremental hunting over a stream of event batches.

Per batch the engine
  1. declares entities, ingests and prunes the provenance graph;
  2. reloads evicted branches touched by committed events and re-advances them;
  3. advances in-memory open nodes against the batch's committed events;
  4. seeds new roots from those events and grows every new node to a fixpoint;
  5. evicts branches idle for longer than t_forget (stream time).
"""

from dataclasses import dataclass, field
from typing import Iterable, Optional

from src.config import EngineSettings
from src.core.errors import ConfigError
from src.core.events import Entity, Event
from src.core.hunter import AdvanceResult, Hunter, event_touch_keys, group_by_op
from src.core.provenance import IngestStats, ProvenanceGraph
from src.core.query_graph import QueryGraph, merge_analogous
from src.core.state import Alert, NodeState, TreeNode
from src.db.branch_repository import BranchRepository, EvictedBranchRecord
from src.utils.log_utils import get_logger

logger = get_logger(__name__)


@dataclass
class BatchDelta:
    events: list[Event] = field(default_factory=list)
    entities: list[str] = field(default_factory=list)
    affected: set[str] = field(default_factory=set)
    fresh_candidates: dict[str, dict[str, set[str]]] = field(default_factory=dict)


@dataclass
class EngineCounters:
    batches: int = 0
    evictions: int = 0
    reloads: int = 0
    thrash: int = 0
    eviction_failures: int = 0
    reload_failures: int = 0
    quarantined: int = 0
    peak_nodes: int = 0

    def summary(self) -> dict[str, int]:
        return dict(self.__dict__)


@dataclass
class BatchResult:
    alerts: list[Alert]
    warnings: list[Alert]
    delta: BatchDelta
    ingest: IngestStats
    pruned: int
    reloaded: list[str]
    evicted: int
    new_nodes: int
    in_memory_nodes: int

    def summary(self) -> dict[str, int]:
        return {
            **self.ingest.summary(),
            "pruned": self.pruned,
            "reloaded": len(self.reloaded),
            "evicted": self.evicted,
            "new_nodes": self.new_nodes,
            "alerts": len(self.alerts),
            "in_memory_nodes": self.in_memory_nodes,
        }


class HuntingEngine:
    """One provenance graph, one hunter per query graph, one optional branch store."""

    def __init__(
        self,
        queries: Iterable[QueryGraph],
        settings: Optional[EngineSettings] = None,
        repository: Optional[BranchRepository] = None,
    ):
        self.settings = settings or EngineSettings()
        self.graph = ProvenanceGraph(self.settings.reorder_window_us)
        self.repository = repository
        self.hunters: dict[str, Hunter] = {}
        for query in queries:
            prepared = merge_analogous(query) if self.settings.merge_queries else query
            self.hunters[prepared.id] = Hunter(prepared, self.settings)
        self.counters = EngineCounters()

    # -------------------- Batches --------------------

    def apply_batch(
        self, events: Iterable[Event], entities: Iterable[Entity] = (), *, flush: bool = False
    ) -> BatchResult:
        graph = self.graph
        graph.declare(entities)
        ingest = graph.ingest(events, flush=flush)
        pruned = graph.prune_isolated() if self.settings.prune_each_batch else 0

        delta = BatchDelta(events=list(ingest.committed_events), entities=graph.drain_fresh_entities())
        for hunter in self.hunters.values():
            hunter.begin_batch()
            added = hunter.add_candidates(graph, delta.entities)
            if added:
                delta.fresh_candidates[hunter.query.id] = added

        produced = AdvanceResult()
        reloaded: list[str] = []
        if delta.events:
            reloaded = self._reload_touched(delta.events, produced)
            delta.affected.update(reloaded)
            by_op = group_by_op(delta.events)
            for hunter in self.hunters.values():
                extended = hunter.advance(graph, delta=by_op)
                produced.extend(extended)
                produced.extend(hunter.grow(graph, extended.nodes))
                seeded = hunter.seed(graph, by_op)
                produced.extend(seeded)
                produced.extend(hunter.grow(graph, seeded.nodes))
            delta.affected.update(node.branch_id for node in produced.nodes)

        evicted = 0
        if self.settings.t_forget_us is not None and self.repository is not None:
            evicted = self.evict_stale(graph.watermark, self.settings.t_forget_us)

        self.counters.batches += 1
        in_memory = self.in_memory_nodes()
        self.counters.peak_nodes = max(self.counters.peak_nodes, in_memory)

        result = BatchResult(
            alerts=[a for a in produced.alerts if a.kind == "alert"],
            warnings=[a for a in produced.alerts if a.kind == "warning"],
            delta=delta,
            ingest=ingest,
            pruned=pruned,
            reloaded=reloaded,
            evicted=evicted,
            new_nodes=len(produced.nodes),
            in_memory_nodes=in_memory,
        )
        logger.info(f"Batch {self.counters.batches}: {result.summary()}")
        return result

    def flush(self) -> BatchResult:
        """Commit everything still staged (end of stream)."""
        return self.apply_batch((), flush=True)

    # -------------------- Eviction --------------------

    def evict_stale(self, now: int, t_forget: Optional[int]) -> int:
        """Move branches idle since before (now - t_forget) to the store."""
        if t_forget is None or self.repository is None:
            return 0
        if t_forget <= 0:
            raise ConfigError("t_forget must be positive", t_forget=t_forget)

        evicted = 0
        for hunter in self.hunters.values():
            tree = hunter.tree
            for branch_id, root in list(tree.branches.items()):
                open_nodes = [n for n in root.walk() if not n.is_complete]
                if not open_nodes:
                    # nothing left to extend; its alerts live in the ledger
                    del tree.branches[branch_id]
                    continue
                if root.latest_update() >= now - t_forget:
                    continue

                keys: set[str] = set()
                for node in open_nodes:
                    keys |= hunter.touch_keys(self.graph, node)
                for node in open_nodes:
                    node.state = NodeState.EVICTED
                record = EvictedBranchRecord(branch_id, hunter.query.id, root, keys, now)
                ok, err = self.repository.save(record)
                if not ok:
                    for node in open_nodes:
                        node.state = NodeState.ACTIVE
                    self.counters.eviction_failures += 1
                    logger.error(f"Eviction of {branch_id} aborted: {err}")
                    continue
                del tree.branches[branch_id]
                tree.evicted.add(branch_id)
                evicted += 1

        self.counters.evictions += evicted
        if evicted:
            logger.info(f"Evicted {evicted} branches (now={now})")
        return evicted

    def reload_if_touched(self, ev: Event) -> list[str]:
        """Restore and re-advance every evicted branch indexed under ev's endpoints."""
        produced = AdvanceResult()
        return self._reload_touched([ev], produced)

    def _reload_touched(self, events: Iterable[Event], produced: AdvanceResult) -> list[str]:
        if self.repository is None:
            return []
        keys: set[str] = set()
        for ev in events:
            keys |= event_touch_keys(ev)
        restored: list[str] = []
        for branch_id in sorted(self.repository.match(keys)):
            record, err = self.repository.load(branch_id)
            if record is None:
                self.counters.quarantined = self.repository.quarantined
                logger.warning(f"Could not reload {branch_id}: {err}")
                continue
            hunter = self.hunters.get(record.query_id)
            if hunter is None:
                logger.warning(f"Branch {branch_id} belongs to unknown query {record.query_id}")
                continue
            if branch_id in hunter.tree.branches:
                # the live copy is newer than the stored one
                self.repository.remove(branch_id)
                continue
            ok, err = self.repository.remove(branch_id)
            if not ok:
                self.counters.reload_failures += 1
                logger.error(f"Reload of {branch_id} aborted, branch stays evicted: {err}")
                continue
            self._reinstate(hunter, record)
            open_nodes = [n for n in record.root.walk() if not n.is_complete]
            produced.extend(hunter.grow(self.graph, open_nodes))
            restored.append(branch_id)

        if restored:
            self.counters.reloads += len(restored)
            logger.info(f"Reloaded {len(restored)} branches")
        return restored

    def _reinstate(self, hunter: Hunter, record: EvictedBranchRecord) -> None:
        now = self.graph.watermark
        tree = hunter.tree
        tree.branches[record.branch_id] = record.root
        tree.evicted.discard(record.branch_id)
        for node in record.root.walk():
            if node.state is NodeState.EVICTED:
                node.state = NodeState.ACTIVE
        record.root.last_update = now
        t_forget = self.settings.t_forget_us
        if t_forget is not None and now - record.evicted_at <= t_forget:
            self.counters.thrash += 1

    # -------------------- Views --------------------

    def alerts(self) -> list[Alert]:
        """Cumulative alerts of every query, best first."""
        merged = [a for hunter in self.hunters.values() for a in hunter.ledger.alerts()]
        return sorted(merged, key=Alert.sort_key)

    def warnings(self) -> list[Alert]:
        merged = [a for hunter in self.hunters.values() for a in hunter.ledger.warnings()]
        return sorted(merged, key=Alert.sort_key)

    def in_memory_nodes(self) -> int:
        return sum(hunter.tree.node_count() for hunter in self.hunters.values())

    def open_nodes(self) -> list[TreeNode]:
        return [n for hunter in self.hunters.values() for n in hunter.tree.open_nodes()]

    def summary(self) -> dict:
        return {
            "graph": self.graph.summary(),
            "engine": self.counters.summary(),
            "branches": {qid: len(h.tree) for qid, h in self.hunters.items()},
            "evicted": {qid: len(h.tree.evicted) for qid, h in self.hunters.items()},
            "alerts": sum(len(h.ledger) for h in self.hunters.values()),
        }


def hunt_snapshot(
    queries: Iterable[QueryGraph], graph: ProvenanceGraph, settings: Optional[EngineSettings] = None
) -> list[Alert]:
    """One-shot alignment of every query against a finished graph."""
    settings = settings or EngineSettings()
    alerts: list[Alert] = []
    for query in queries:
        prepared = merge_analogous(query) if settings.merge_queries else query
        alerts.extend(Hunter(prepared, settings).hunt(graph))
    return sorted(alerts, key=Alert.sort_key)
