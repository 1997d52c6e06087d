"""
Query graphs: loading, merging of analogous nodes, attack sequence and flows.

Document format (JSON):

    {"id": "ztmp_dropper",
     "nodes": [{"qid": "firefox", "tag": "P", "name_pattern": "firefox.*"}, ...],
     "edges": [{"src": "firefox", "dst": "ztmp", "op": "write", "step": 1}, ...]}

Edges follow information flow: for backward ops (accept, load, receive, read)
`src` is the object the information comes from and `dst` the process.
"""

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import networkx as nx
from pydantic import BaseModel, Field, ValidationError

from src.core.errors import QueryValidationError
from src.core.events import EVENT_TABLE, Direction, EventType
from src.core.tagging import EntityTag
from src.utils.log_utils import get_logger

logger = get_logger(__name__)


# -------------------- Document schema --------------------


class QueryNodeDoc(BaseModel):
    qid: str = Field(min_length=1)
    tag: EntityTag
    name_pattern: Optional[str] = None
    merged_from: Optional[list[str]] = None


class QueryEdgeDoc(BaseModel):
    src: str
    dst: str
    op: EventType
    step: int = Field(ge=0)


class QueryGraphDoc(BaseModel):
    id: str = Field(min_length=1)
    nodes: list[QueryNodeDoc]
    edges: list[QueryEdgeDoc]


# -------------------- Runtime types --------------------


@dataclass(frozen=True, slots=True)
class QueryNode:
    qid: str
    tag: EntityTag
    name_pattern: Optional[str] = None
    merged_from: tuple[str, ...] = ()
    regex: Optional[re.Pattern[str]] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, slots=True)
class QueryEdge:
    src: str
    dst: str
    op: EventType
    step: int

    @property
    def direction(self) -> Direction:
        return EVENT_TABLE[self.op].direction

    @property
    def subject(self) -> str:
        """Query node standing for the acting process."""
        return self.src if self.direction is Direction.FORWARD else self.dst

    @property
    def object(self) -> str:
        """Query node standing for the event object (the mapped entity)."""
        return self.dst if self.direction is Direction.FORWARD else self.src


@dataclass(frozen=True, slots=True)
class NodeFlow:
    """Incident-edge summary of one query node."""

    qid: str
    inbound: tuple[tuple[EventType, str], ...]
    outbound: tuple[tuple[EventType, str], ...]

    @property
    def degree(self) -> int:
        return len(self.inbound) + len(self.outbound)


@dataclass(frozen=True)
class QueryGraph:
    id: str
    nodes: dict[str, QueryNode]
    edges: tuple[QueryEdge, ...]
    sequence: tuple[QueryEdge, ...] = ()
    flows: dict[str, NodeFlow] = field(default_factory=dict, compare=False)

    def node(self, qid: str) -> QueryNode:
        return self.nodes[qid]

    def __len__(self) -> int:
        return len(self.sequence)


# -------------------- Loading --------------------


def _compile(node: QueryNodeDoc) -> Optional[re.Pattern[str]]:
    if node.name_pattern is None:
        return None
    try:
        return re.compile(node.name_pattern)
    except re.error as e:
        raise QueryValidationError(
            f"Invalid name pattern for node '{node.qid}': {e}", qid=node.qid
        ) from None


def _check_edge(edge: QueryEdge, nodes: dict[str, QueryNode]) -> None:
    for qid in (edge.src, edge.dst):
        if qid not in nodes:
            raise QueryValidationError(f"Edge references unknown node '{qid}'", qid=qid)
    if edge.src == edge.dst and edge.op is not EventType.EXIT:
        raise QueryValidationError(f"Self-loop '{edge.src}' is only allowed for exit", qid=edge.src)

    spec = EVENT_TABLE[edge.op]
    subject_kind = nodes[edge.subject].tag.kind
    object_kind = nodes[edge.object].tag.kind
    if subject_kind is not spec.subject_kind or object_kind not in spec.object_kinds:
        raise QueryValidationError(
            f"Edge {edge.src} -{edge.op.value}-> {edge.dst} is inconsistent with the event table "
            f"({subject_kind.value} -> {object_kind.value})",
            op=edge.op.value,
        )


def _check_structure(nodes: dict[str, QueryNode], edges: tuple[QueryEdge, ...]) -> None:
    if not edges:
        raise QueryValidationError("Query graph has no edges")
    touched = {qid for e in edges for qid in (e.src, e.dst)}
    unused = sorted(set(nodes) - touched)
    if unused:
        raise QueryValidationError(f"Nodes without edges: {', '.join(unused)}", nodes=unused)

    shape = nx.MultiDiGraph()
    shape.add_nodes_from(nodes)
    shape.add_edges_from((e.src, e.dst) for e in edges)
    if not nx.is_weakly_connected(shape):
        raise QueryValidationError("Query graph is not weakly connected")


def build_query(graph_id: str, nodes: dict[str, QueryNode], edges: tuple[QueryEdge, ...]) -> QueryGraph:
    """Assemble a QueryGraph and derive its sequence and flows."""
    draft = QueryGraph(graph_id, nodes, edges)
    return QueryGraph(graph_id, nodes, edges, tuple(extract_sequence(draft)), flows(draft))


def load_query(doc: dict[str, Any] | QueryGraphDoc) -> QueryGraph:
    """Validate a query-graph document and return the runtime graph."""
    try:
        parsed = doc if isinstance(doc, QueryGraphDoc) else QueryGraphDoc.model_validate(doc)
    except ValidationError as e:
        raise QueryValidationError(f"Malformed query graph: {e}") from None

    nodes: dict[str, QueryNode] = {}
    for node in parsed.nodes:
        if node.qid in nodes:
            raise QueryValidationError(f"Duplicate node '{node.qid}'", qid=node.qid)
        nodes[node.qid] = QueryNode(
            node.qid,
            node.tag,
            node.name_pattern,
            tuple(node.merged_from or (node.qid,)),
            _compile(node),
        )

    edges = tuple(QueryEdge(e.src, e.dst, e.op, e.step) for e in parsed.edges)
    for edge in edges:
        _check_edge(edge, nodes)
    _check_structure(nodes, edges)

    graph = build_query(parsed.id, nodes, edges)
    logger.debug(f"Loaded query '{graph.id}': {len(nodes)} nodes, {len(edges)} edges")
    return graph


def load_query_file(path: str | Path) -> QueryGraph:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise QueryValidationError(f"Cannot read query graph {path}: {e}", path=str(path)) from None
    return load_query(raw)


def serialize(graph: QueryGraph) -> dict[str, Any]:
    """Canonical document form; `load_query(serialize(g)) == g`."""
    return {
        "id": graph.id,
        "nodes": [
            {
                "qid": n.qid,
                "tag": n.tag.value,
                "name_pattern": n.name_pattern,
                "merged_from": list(n.merged_from),
            }
            for n in graph.nodes.values()
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "op": e.op.value, "step": e.step} for e in graph.edges
        ],
    }


# -------------------- Sequence and flows --------------------


def extract_sequence(graph: QueryGraph) -> list[QueryEdge]:
    """
    Edges sorted by step. Edges sharing a step are ordered by a topological
    order of their forward-direction part, then by input order.
    """
    node_order = {qid: i for i, qid in enumerate(graph.nodes)}
    by_step: dict[int, list[tuple[int, QueryEdge]]] = defaultdict(list)
    for index, edge in enumerate(graph.edges):
        by_step[edge.step].append((index, edge))

    sequence: list[QueryEdge] = []
    for step in sorted(by_step):
        tied = by_step[step]
        if len(tied) == 1:
            sequence.append(tied[0][1])
            continue

        dag = nx.DiGraph()
        for _, edge in tied:
            if edge.direction is Direction.FORWARD and edge.src != edge.dst:
                dag.add_edge(edge.src, edge.dst)
        if not nx.is_directed_acyclic_graph(dag):
            raise QueryValidationError(f"Cyclic ordering among edges of step {step}", step=step)
        rank = {
            qid: i
            for i, qid in enumerate(nx.lexicographical_topological_sort(dag, key=node_order.__getitem__))
        }
        unranked = len(rank)

        def tie_key(item: tuple[int, QueryEdge]) -> tuple[int, int]:
            index, edge = item
            if edge.direction is Direction.FORWARD:
                return rank.get(edge.src, unranked), index
            return unranked, index

        sequence.extend(edge for _, edge in sorted(tied, key=tie_key))
    return sequence


def flows(graph: QueryGraph) -> dict[str, NodeFlow]:
    inbound: dict[str, list[tuple[EventType, str]]] = defaultdict(list)
    outbound: dict[str, list[tuple[EventType, str]]] = defaultdict(list)
    for edge in graph.edges:
        outbound[edge.src].append((edge.op, edge.dst))
        inbound[edge.dst].append((edge.op, edge.src))
    return {
        qid: NodeFlow(qid, tuple(inbound[qid]), tuple(outbound[qid])) for qid in graph.nodes
    }


# -------------------- Merging --------------------


def _signature(graph: QueryGraph, qid: str) -> tuple:
    incident = []
    for edge in graph.edges:
        if edge.src == qid:
            incident.append((edge.op.value, "out", graph.nodes[edge.dst].tag.value))
        if edge.dst == qid:
            incident.append((edge.op.value, "in", graph.nodes[edge.src].tag.value))
    return (graph.nodes[qid].tag.value, tuple(sorted(incident)))


def _merged_node(members: list[QueryNode]) -> QueryNode:
    first = members[0]
    patterns = [m.name_pattern for m in members]
    if any(p is None for p in patterns):
        pattern = None
    else:
        unique = list(dict.fromkeys(patterns))
        pattern = unique[0] if len(unique) == 1 else "|".join(f"(?:{p})" for p in unique)
    merged_from = tuple(qid for m in members for qid in m.merged_from)
    return QueryNode(first.qid, first.tag, pattern, merged_from, re.compile(pattern) if pattern else None)


def _merge_once(graph: QueryGraph) -> Optional[QueryGraph]:
    groups: dict[tuple, list[str]] = defaultdict(list)
    for qid in graph.nodes:
        groups[_signature(graph, qid)].append(qid)

    rename: dict[str, str] = {}
    new_nodes: dict[str, QueryNode] = {}
    for members in groups.values():
        if len(members) < 2:
            continue
        member_set = set(members)
        if any(e.src in member_set and e.dst in member_set for e in graph.edges):
            continue
        merged = _merged_node([graph.nodes[q] for q in members])
        new_nodes[merged.qid] = merged
        for qid in members:
            rename[qid] = merged.qid

    if not rename:
        return None

    nodes = {}
    for qid, node in graph.nodes.items():
        target = rename.get(qid, qid)
        if target not in nodes:
            nodes[target] = new_nodes.get(target, node)

    collapsed: dict[tuple[str, str, EventType], QueryEdge] = {}
    for edge in graph.edges:
        src, dst = rename.get(edge.src, edge.src), rename.get(edge.dst, edge.dst)
        ident = (src, dst, edge.op)
        current = collapsed.get(ident)
        if current is None or edge.step < current.step:
            collapsed[ident] = QueryEdge(src, dst, edge.op, edge.step)
    return build_query(graph.id, nodes, tuple(collapsed.values()))


def merge_analogous(graph: QueryGraph) -> QueryGraph:
    """
    Merge same-tag nodes with equal incident-edge signatures until nothing
    changes. Groups whose members are adjacent to each other are left alone.
    """
    merged = graph
    while True:
        nxt = _merge_once(merged)
        if nxt is None:
            break
        merged = nxt
    if merged is not graph:
        logger.info(
            f"Merged query '{graph.id}': {len(graph.nodes)}->{len(merged.nodes)} nodes, "
            f"{len(graph.edges)}->{len(merged.edges)} edges"
        )
    return merged
