"""
Alignment of one query graph against the provenance graph.

Step k of the attack sequence binds its subject and object query nodes. With
the subject already bound to entity a, the evidence event may be performed by
any process EST-reachable from a, through a chain that starts after the
previous step's evidence and ends before this one. With the subject unbound
the evidence must come directly from a fresh candidate.

Children of a node are grouped by the bindings they add. Realizations are
scanned in (t, seq) order and a child is only kept when it beats the best
path score seen so far for its group, so every group holds exactly the
realizations that are not dominated in both time and score.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from src.config import EngineSettings
from src.core.errors import ConfigError
from src.core.est import EstChain, EstFrontier, est_frontier
from src.core.events import KEY_MIN, Event, EventKey, EventType
from src.core.provenance import ProvenanceGraph
from src.core.query_graph import QueryGraph, QueryNode
from src.core.state import (
    Alert,
    AlertStep,
    BindingKey,
    CandidateSets,
    NodeState,
    SuspiciousSemanticTree,
    TreeNode,
)
from src.core.tagging import EntityKind
from src.utils.log_utils import get_logger

logger = get_logger(__name__)

DeltaByOp = dict[EventType, list[Event]]


def find_candidates(query: QueryGraph, graph: ProvenanceGraph) -> CandidateSets:
    """FC[q] for every query node."""
    return {qid: graph.candidates(node.tag, node.regex) for qid, node in query.nodes.items()}


def fits(node: QueryNode, graph: ProvenanceGraph, uid: str) -> bool:
    entity = graph.entities.get(uid)
    if entity is None or entity.tag is not node.tag:
        return False
    return node.regex is None or node.regex.search(entity.name) is not None


def path_score(chain: EstChain) -> float:
    """Reciprocal of the realized path length; a direct match scores 1."""
    return 1.0 / (chain.hops + 1)


def group_by_op(events: Iterable[Event]) -> DeltaByOp:
    grouped: DeltaByOp = {}
    for ev in events:
        grouped.setdefault(ev.op, []).append(ev)
    return grouped


# -------------------- Alert ledger --------------------


class AlertLedger:
    """Best alert per (query, mapping); warnings are kept apart."""

    def __init__(self):
        self._alerts: dict[tuple, Alert] = {}
        self._warnings: dict[tuple, Alert] = {}

    def offer(self, alert: Alert) -> bool:
        book = self._alerts if alert.kind == "alert" else self._warnings
        key = alert.mapping_key()
        current = book.get(key)
        if current is not None:
            if alert.score < current.score:
                return False
            if alert.score == current.score and alert.evidence_keys() >= current.evidence_keys():
                return False
        book[key] = alert
        return True

    def alerts(self) -> list[Alert]:
        return sorted(self._alerts.values(), key=Alert.sort_key)

    def warnings(self) -> list[Alert]:
        return sorted(self._warnings.values(), key=Alert.sort_key)

    def __len__(self) -> int:
        return len(self._alerts)


@dataclass
class AdvanceResult:
    nodes: list[TreeNode] = field(default_factory=list)
    alerts: list[Alert] = field(default_factory=list)

    def extend(self, other: "AdvanceResult") -> None:
        self.nodes.extend(other.nodes)
        self.alerts.extend(other.alerts)


# -------------------- Hunter --------------------


class Hunter:
    """Grows the suspicious semantic tree of one query graph."""

    def __init__(self, query: QueryGraph, settings: Optional[EngineSettings] = None):
        self.query = query
        self.settings = settings or EngineSettings()
        self.tree = SuspiciousSemanticTree(query)
        self.ledger = AlertLedger()
        self.candidates: CandidateSets = {qid: set() for qid in query.nodes}
        self._frontiers: dict[tuple[str, EventKey], EstFrontier] = {}

    @property
    def steps(self) -> int:
        return len(self.query.sequence)

    def hop_limited_mode(self, c_thr: Optional[int]) -> None:
        """Bound every EST search by c_thr hops; None restores the unbounded search."""
        if c_thr is not None and c_thr < 1:
            raise ConfigError("c_thr must be a positive integer", c_thr=c_thr)
        self.settings = self.settings.hop_limited(c_thr)
        self._frontiers.clear()

    # -------------------- Snapshot bookkeeping --------------------

    def begin_batch(self) -> None:
        """Forget frontiers computed on an older snapshot."""
        self._frontiers.clear()

    def find_candidates(self, graph: ProvenanceGraph) -> CandidateSets:
        self.candidates = find_candidates(self.query, graph)
        return self.candidates

    def add_candidates(self, graph: ProvenanceGraph, uids: Iterable[str]) -> dict[str, set[str]]:
        """Fold freshly declared entities into FC; returns the additions per query node."""
        added: dict[str, set[str]] = {}
        for uid in uids:
            for qid, node in self.query.nodes.items():
                if fits(node, graph, uid):
                    self.candidates[qid].add(uid)
                    added.setdefault(qid, set()).add(uid)
        return added

    def frontier(self, graph: ProvenanceGraph, anchor: str, after: EventKey) -> EstFrontier:
        cached = self._frontiers.get((anchor, after))
        if cached is None:
            cached = est_frontier(
                graph, anchor, after, self.settings.budget, self.settings.disabled_policies
            )
            self._frontiers[(anchor, after)] = cached
        return cached

    # -------------------- Realizations --------------------

    def realizations(
        self,
        graph: ProvenanceGraph,
        bindings: dict[str, str],
        prev: EventKey,
        step_index: int,
        delta: Optional[DeltaByOp] = None,
    ) -> Iterator[tuple[Event, EstChain, dict[str, str]]]:
        """(evidence, chain, new bindings) for one step, in evidence-key order."""
        edge = self.query.sequence[step_index]
        subj_q, obj_q = edge.subject, edge.object
        s_bound = bindings.get(subj_q)
        o_bound = bindings.get(obj_q)
        used = set(bindings.values())
        fc = self.candidates

        def object_ok(ev: Event) -> bool:
            if o_bound is not None:
                return ev.uid_o == o_bound
            return ev.uid_o in fc[obj_q] and ev.uid_o not in used

        if delta is not None:
            pool: Optional[list[Event]] = [e for e in delta.get(edge.op, ()) if e.key > prev and object_ok(e)]
        elif o_bound is not None:
            pool = [e for e in graph.edges_after(o_bound, "in", prev) if e.op is edge.op]
        elif s_bound is None:
            pool = [e for e in graph.ops_after(edge.op, prev) if object_ok(e)]
        else:
            pool = None

        if s_bound is None:
            for ev in pool:
                if subj_q == obj_q:
                    if ev.uid_s != ev.uid_o:
                        continue
                    new = {subj_q: ev.uid_s}
                else:
                    if ev.uid_s == ev.uid_o or ev.uid_s in used or ev.uid_s not in fc[subj_q]:
                        continue
                    new = {subj_q: ev.uid_s}
                    if o_bound is None:
                        new[obj_q] = ev.uid_o
                yield ev, EstChain.direct(ev.uid_s), new
            return

        if pool is not None and not pool:
            return
        frontier = self.frontier(graph, s_bound, prev)
        if pool is None:
            pool = sorted(
                (
                    ev
                    for uid in frontier.entities()
                    if graph.entity(uid).kind is EntityKind.PROCESS
                    for ev in graph.edges_after(uid, "out", frontier.earliest_key(uid))
                    if ev.op is edge.op and object_ok(ev)
                ),
                key=lambda e: e.key,
            )
        for ev in pool:
            chain = frontier.chain_before(ev.uid_s, ev.key)
            if chain is None:
                continue
            yield ev, chain, ({} if o_bound is not None else {obj_q: ev.uid_o})

    # -------------------- Tree growth --------------------

    def _make_node(
        self,
        graph: ProvenanceGraph,
        parent: Optional[TreeNode],
        branch_id: str,
        step_index: int,
        ev: Event,
        chain: EstChain,
        bindings: dict[str, str],
    ) -> TreeNode:
        seq_num = step_index + 1
        return TreeNode(
            branch_id=branch_id,
            seq_num=seq_num,
            step_index=step_index,
            mapped_entity=ev.uid_o,
            evidence_event=ev,
            est_chain=chain,
            bindings=bindings,
            score=(parent.score if parent else 0.0) + path_score(chain),
            last_update=max(graph.watermark, 0),
            state=NodeState.COMPLETE if seq_num == self.steps else NodeState.ACTIVE,
            parent=parent,
        )

    def seed(self, graph: ProvenanceGraph, delta: Optional[DeltaByOp] = None) -> AdvanceResult:
        """One root per step-0 binding, from its earliest evidence."""
        result = AdvanceResult()
        for ev, chain, new in self.realizations(graph, {}, KEY_MIN, 0, delta):
            key: BindingKey = tuple(sorted(new.items()))
            if key in self.tree.root_keys:
                continue
            branch_id = SuspiciousSemanticTree.branch_id_for(self.query.id, key)
            root = self._make_node(graph, None, branch_id, 0, ev, chain, dict(new))
            self.tree.add_root(key, root)
            result.nodes.append(root)
            result.alerts.extend(self._record(graph, root))
        if result.nodes:
            logger.debug(f"[{self.query.id}] seeded {len(result.nodes)} roots")
        return result

    def _extend(self, graph: ProvenanceGraph, node: TreeNode, delta: Optional[DeltaByOp]) -> list[TreeNode]:
        step_index = node.seq_num
        if step_index >= self.steps:
            return []
        children: list[TreeNode] = []
        for ev, chain, new in self.realizations(graph, node.bindings, node.evidence_key, step_index, delta):
            key: BindingKey = tuple(sorted(new.items()))
            score = path_score(chain)
            mark = node.child_marks.get(key)
            if mark is not None and (ev.key <= mark[0] or score <= mark[1]):
                continue
            node.child_marks[key] = (ev.key, score)
            child = self._make_node(
                graph, node, node.branch_id, step_index, ev, chain, {**node.bindings, **new}
            )
            node.children.append(child)
            children.append(child)
        return children

    def advance(
        self,
        graph: ProvenanceGraph,
        nodes: Optional[Iterable[TreeNode]] = None,
        delta: Optional[DeltaByOp] = None,
    ) -> AdvanceResult:
        """Extend open nodes (all of them by default) by one step."""
        targets = list(nodes) if nodes is not None else list(self.tree.open_nodes())
        result = AdvanceResult()
        for node in targets:
            if node.is_complete:
                continue
            if delta is not None and self.query.sequence[node.seq_num].op not in delta:
                continue
            for child in self._extend(graph, node, delta):
                result.nodes.append(child)
                result.alerts.extend(self._record(graph, child))
        return result

    def grow(self, graph: ProvenanceGraph, nodes: Iterable[TreeNode]) -> AdvanceResult:
        """Advance `nodes` and everything they produce until nothing new appears."""
        result = AdvanceResult()
        pending = deque(nodes)
        while pending:
            step = self.advance(graph, [pending.popleft()])
            result.extend(step)
            pending.extend(step.nodes)
        return result

    def hunt(self, graph: ProvenanceGraph) -> list[Alert]:
        """One-shot alignment over the whole snapshot; alerts by score descending."""
        self.begin_batch()
        self.find_candidates(graph)
        seeded = self.seed(graph)
        grown = self.grow(graph, self.tree.open_nodes())
        logger.info(
            f"[{self.query.id}] hunt: {len(self.tree)} branches, "
            f"{len(seeded.nodes) + len(grown.nodes)} nodes, {len(self.ledger)} alerts"
        )
        return self.ledger.alerts()

    # -------------------- Alerts --------------------

    def _record(self, graph: ProvenanceGraph, node: TreeNode) -> list[Alert]:
        if node.is_complete:
            alert = build_alert(self.query, graph, node, "alert")
        elif self.settings.alert_fraction < 1 and node.seq_num >= math.ceil(
            self.settings.alert_fraction * self.steps
        ):
            alert = build_alert(self.query, graph, node, "warning")
        else:
            return []
        if not self.ledger.offer(alert):
            return []
        if alert.kind == "alert":
            logger.info(f"[{self.query.id}] alert score={alert.score} mapping={alert.mapping}")
        return [alert]

    # -------------------- Eviction support --------------------

    def touch_keys(self, graph: ProvenanceGraph, node: TreeNode) -> set[str]:
        """Index keys under which a delta event may extend `node`."""
        if node.is_complete:
            return set()
        edge = self.query.sequence[node.seq_num]
        s_bound = node.bindings.get(edge.subject)
        if s_bound is not None:
            frontier = self.frontier(graph, s_bound, node.evidence_key)
            return {entity_key(uid) for uid in frontier.entities()}
        o_bound = node.bindings.get(edge.object)
        if o_bound is not None:
            return {entity_key(o_bound)}
        return {op_key(edge.op)}


def entity_key(uid: str) -> str:
    return f"e:{uid}"


def op_key(op: EventType) -> str:
    return f"op:{op.value}"


def event_touch_keys(ev: Event) -> set[str]:
    return {entity_key(ev.uid_s), entity_key(ev.uid_o), op_key(ev.op)}


def build_alert(query: QueryGraph, graph: ProvenanceGraph, node: TreeNode, kind: str) -> Alert:
    steps = []
    for n in node.path():
        edge = query.sequence[n.step_index]
        steps.append(
            AlertStep(
                step=edge.step,
                op=edge.op.value,
                src=edge.src,
                dst=edge.dst,
                event=n.evidence_event.to_dict(),
                est_path=[graph.entity(uid).name for uid in n.est_chain.nodes[1:]],
                path_score=round(path_score(n.est_chain), 6),
            )
        )
    return Alert(
        query_id=query.id,
        kind=kind,
        score=round(node.score, 6),
        matched_steps=node.seq_num,
        total_steps=len(query.sequence),
        mapping=dict(sorted(node.bindings.items())),
        steps=steps,
    )
