"""
Hunting state: suspicious semantic trees, their nodes, and alert records.

A tree belongs to one query graph. Each root binds the first attack step; a
root together with everything grown below it is a branch, the unit that is
evicted to and reloaded from the branch store.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Optional

from pydantic import BaseModel, Field

from src.core.est import EstChain
from src.core.events import Event, EventKey
from src.core.query_graph import QueryGraph

CandidateSets = dict[str, set[str]]
BindingKey = tuple[tuple[str, str], ...]


class NodeState(str, Enum):
    ACTIVE = "active"
    EVICTED = "evicted"
    COMPLETE = "complete"


@dataclass(eq=False, slots=True)
class TreeNode:
    branch_id: str
    seq_num: int
    step_index: int
    mapped_entity: str
    evidence_event: Event
    est_chain: EstChain
    bindings: dict[str, str]
    score: float
    last_update: int
    state: NodeState = NodeState.ACTIVE
    parent: Optional["TreeNode"] = None
    children: list["TreeNode"] = field(default_factory=list)
    # per new-binding key: (evidence key, score) of the last child kept
    child_marks: dict[BindingKey, tuple[EventKey, float]] = field(default_factory=dict)

    @property
    def evidence_key(self) -> EventKey:
        return self.evidence_event.key

    @property
    def is_complete(self) -> bool:
        return self.state is NodeState.COMPLETE

    def path(self) -> list["TreeNode"]:
        """Root-to-self node list."""
        nodes: list[TreeNode] = []
        node: Optional[TreeNode] = self
        while node is not None:
            nodes.append(node)
            node = node.parent
        return nodes[::-1]

    def walk(self) -> Iterator["TreeNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def size(self) -> int:
        return sum(1 for _ in self.walk())

    def latest_update(self) -> int:
        return max(node.last_update for node in self.walk())

    # -------------------- Serialization --------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "branch_id": self.branch_id,
            "seq_num": self.seq_num,
            "step_index": self.step_index,
            "mapped_entity": self.mapped_entity,
            "evidence": self.evidence_event.to_dict(),
            "chain": self.est_chain.to_dict(),
            "bindings": self.bindings,
            "score": self.score,
            "last_update": self.last_update,
            "state": self.state.value,
            "marks": [
                [[list(pair) for pair in key], list(mark_key), mark_score]
                for key, (mark_key, mark_score) in self.child_marks.items()
            ],
            "children": [child.to_dict() for child in self.children],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], parent: Optional["TreeNode"] = None) -> "TreeNode":
        node = cls(
            branch_id=data["branch_id"],
            seq_num=int(data["seq_num"]),
            step_index=int(data["step_index"]),
            mapped_entity=data["mapped_entity"],
            evidence_event=Event.from_dict(data["evidence"]),
            est_chain=EstChain.from_dict(data["chain"]),
            bindings=dict(data["bindings"]),
            score=float(data["score"]),
            last_update=int(data["last_update"]),
            state=NodeState(data["state"]),
            parent=parent,
        )
        node.child_marks = {
            tuple((q, e) for q, e in key): (tuple(mark_key), float(mark_score))
            for key, mark_key, mark_score in data.get("marks", [])
        }
        node.children = [cls.from_dict(child, node) for child in data.get("children", [])]
        return node


class SuspiciousSemanticTree:
    """All branches grown for one query graph."""

    def __init__(self, query: QueryGraph):
        self.query = query
        # branch id -> root, in memory only
        self.branches: dict[str, TreeNode] = {}
        # step-0 bindings of every root ever created, evicted ones included
        self.root_keys: set[BindingKey] = set()
        self.evicted: set[str] = set()

    @staticmethod
    def branch_id_for(query_id: str, key: BindingKey) -> str:
        return f"{query_id}|" + "|".join(f"{qid}={uid}" for qid, uid in key)

    def add_root(self, key: BindingKey, root: TreeNode) -> None:
        self.root_keys.add(key)
        self.branches[root.branch_id] = root

    def nodes(self) -> Iterator[TreeNode]:
        for root in self.branches.values():
            yield from root.walk()

    def open_nodes(self) -> Iterator[TreeNode]:
        return (n for n in self.nodes() if not n.is_complete)

    def node_count(self) -> int:
        return sum(root.size() for root in self.branches.values())

    def __len__(self) -> int:
        return len(self.branches)


# -------------------- Alerts --------------------


class AlertStep(BaseModel):
    step: int
    op: str
    src: str
    dst: str
    event: dict[str, Any]
    est_path: list[str] = Field(default_factory=list)
    path_score: float


class Alert(BaseModel):
    """Completed alignment of one query graph; warnings carry partial matches."""

    query_id: str
    kind: str = "alert"
    score: float
    matched_steps: int
    total_steps: int
    mapping: dict[str, str]
    steps: list[AlertStep]

    def evidence_keys(self) -> tuple[EventKey, ...]:
        return tuple((s.event["t"], s.event["seq"]) for s in self.steps)

    def mapping_key(self) -> tuple[str, tuple[tuple[str, str], ...]]:
        return self.query_id, tuple(sorted(self.mapping.items()))

    def alert_nodes(self) -> set[str]:
        return set(self.mapping.values())

    def sort_key(self) -> tuple:
        return (-self.score, self.evidence_keys(), self.query_id)
