"""
Exhaustive reference alignment for small instances.

Nothing here shares search code with the hunter: candidates come from a full
entity scan, EST hop counts from a single key-ordered pass over the events,
and every match is checked again by a separate replay verifier.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from src.config import DEFAULT_ORACLE_CAP, DEFAULT_ORACLE_MAX_EDGES
from src.core.errors import OracleSizeError
from src.core.est import EstChain, matching_policy, label_target, replay_chain
from src.core.events import KEY_MIN, Event, EventKey
from src.core.provenance import ProvenanceGraph
from src.core.query_graph import QueryGraph
from src.utils.log_utils import get_logger

logger = get_logger(__name__)

MappingKey = tuple[str, tuple[tuple[str, str], ...]]


@dataclass(frozen=True)
class OracleMatch:
    mapping: dict[str, str]
    score: float
    steps: tuple[tuple[Event, EstChain], ...]

    @property
    def evidence_keys(self) -> tuple[EventKey, ...]:
        return tuple(ev.key for ev, _ in self.steps)

    def key(self, query_id: str) -> MappingKey:
        return query_id, tuple(sorted(self.mapping.items()))


@dataclass
class OracleResult:
    query_id: str
    matches: list[OracleMatch] = field(default_factory=list)

    def mapping_set(self) -> set[MappingKey]:
        return {m.key(self.query_id) for m in self.matches}

    def scores(self) -> dict[MappingKey, float]:
        return {m.key(self.query_id): round(m.score, 6) for m in self.matches}


def _scan_candidates(query: QueryGraph, graph: ProvenanceGraph) -> dict[str, list[str]]:
    found: dict[str, list[str]] = {}
    for qid, node in query.nodes.items():
        found[qid] = sorted(
            uid
            for uid, entity in graph.entities.items()
            if entity.tag is node.tag and (node.regex is None or node.regex.search(entity.name))
        )
    return found


def _injective_mappings(order: list[str], candidates: dict[str, list[str]]):
    def extend(i: int, used: set[str], current: dict[str, str]):
        if i == len(order):
            yield dict(current)
            return
        qid = order[i]
        for uid in candidates[qid]:
            if uid in used:
                continue
            current[qid] = uid
            used.add(uid)
            yield from extend(i + 1, used, current)
            used.discard(uid)
            del current[qid]

    yield from extend(0, set(), {})


def _hop_options(
    events: list[Event],
    graph: ProvenanceGraph,
    start: str,
    after: EventKey,
    wanted: list[Event],
    budget: Optional[int],
    disabled: frozenset[str],
) -> dict[EventKey, EstChain]:
    """
    For each wanted evidence event, the fewest-hop chain from `start` to its
    subject using events strictly between `after` and the evidence.
    """
    wanted_keys = {ev.key for ev in wanted}
    best: dict[str, EstChain] = {start: EstChain.direct(start)}
    found: dict[EventKey, EstChain] = {}
    for ev in events:
        if ev.key <= after:
            continue
        if ev.key in wanted_keys and ev.uid_s in best:
            found[ev.key] = best[ev.uid_s]
        policy = matching_policy(ev, graph.entity(ev.uid_o).tag, disabled)
        if policy is None:
            continue
        source, target = label_target(ev, policy)
        if source not in best:
            continue
        hops = best[source].hops + 1
        if budget is not None and hops > budget:
            continue
        if target not in best or hops < best[target].hops:
            previous = best[source]
            best[target] = EstChain(previous.nodes + (target,), previous.events + (ev,))
    return found


def brute_force_align(
    query: QueryGraph,
    graph: ProvenanceGraph,
    *,
    cap: int = DEFAULT_ORACLE_CAP,
    max_edges: int = DEFAULT_ORACLE_MAX_EDGES,
    budget: Optional[int] = None,
    disabled: frozenset[str] = frozenset(),
) -> OracleResult:
    """Every injective, tag-consistent mapping that realizes the attack sequence."""
    if len(graph.entities) > cap or len(query.edges) > max_edges:
        raise OracleSizeError(
            f"Instance too large for the oracle ({len(graph.entities)} entities, "
            f"{len(query.edges)} edges; caps {cap}/{max_edges})",
            entities=len(graph.entities),
            edges=len(query.edges),
        )

    events = sorted(
        (ev for edges in graph.out_edges.values() for ev in edges), key=lambda e: e.key
    )
    sequence = query.sequence
    candidates = _scan_candidates(query, graph)
    order = list(query.nodes)
    result = OracleResult(query.id)

    # first step at which each query node is bound
    first_seen: dict[str, int] = {}
    for i, edge in enumerate(sequence):
        for qid in (edge.subject, edge.object):
            first_seen.setdefault(qid, i)

    for mapping in _injective_mappings(order, candidates):

        @lru_cache(maxsize=None)
        def best(step: int, prev: EventKey) -> Optional[tuple[float, tuple[EventKey, ...], tuple]]:
            if step == len(sequence):
                return 0.0, (), ()
            edge = sequence[step]
            subject, obj = mapping[edge.subject], mapping[edge.object]
            evidence = [
                ev for ev in events
                if ev.key > prev and ev.op is edge.op and ev.uid_o == obj
            ]
            if first_seen[edge.subject] == step:
                options = {ev.key: EstChain.direct(subject) for ev in evidence if ev.uid_s == subject}
            else:
                options = _hop_options(events, graph, subject, prev, evidence, budget, disabled)

            winner = None
            for ev in evidence:
                chain = options.get(ev.key)
                if chain is None:
                    continue
                rest = best(step + 1, ev.key)
                if rest is None:
                    continue
                score = 1.0 / (chain.hops + 1) + rest[0]
                keys = (ev.key,) + rest[1]
                if winner is None or score > winner[0] or (score == winner[0] and keys < winner[1]):
                    winner = (score, keys, ((ev, chain),) + rest[2])
            return winner

        found = best(0, KEY_MIN)
        if found is not None:
            result.matches.append(OracleMatch(dict(mapping), found[0], found[2]))

    logger.debug(f"Oracle '{query.id}': {len(result.matches)} matches")
    return result


def verify_alignment(
    query: QueryGraph,
    graph: ProvenanceGraph,
    mapping: dict[str, str],
    steps: list[tuple[Event, EstChain]] | tuple[tuple[Event, EstChain], ...],
    *,
    budget: Optional[int] = None,
    disabled: frozenset[str] = frozenset(),
) -> bool:
    """Replay one alignment step by step through the transfer policies and the temporal rule."""
    if len(steps) != len(query.sequence) or set(mapping) != set(query.nodes):
        return False
    if len(set(mapping.values())) != len(mapping):
        return False

    seen: set[str] = set()
    prev = KEY_MIN
    for edge, (ev, chain) in zip(query.sequence, steps):
        if ev.op is not edge.op or ev.uid_o != mapping[edge.object] or ev.key <= prev:
            return False
        if chain.nodes[0] != mapping[edge.subject] or chain.end != ev.uid_s:
            return False
        if edge.subject not in seen and chain.hops:
            return False
        if budget is not None and chain.hops > budget:
            return False
        if chain.hops and not replay_chain(graph, chain, prev, disabled):
            return False
        if chain.hops and chain.last_key >= ev.key:
            return False
        seen.update((edge.subject, edge.object))
        prev = ev.key
    return True

