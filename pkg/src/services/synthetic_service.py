"""
Seeded generators for desk-scale query graphs, instances and event streams.

Everything here is driven by an explicit random.Random so a seed reproduces
the same records byte for byte. Used by `verify` and by the test suite.
"""

import random
from dataclasses import dataclass, field
from typing import Optional

from src.config import MICROS
from src.core.events import EVENT_TABLE, Direction, Entity, Event, EventType, ParsedRecord
from src.core.query_graph import QueryEdge, QueryGraph, QueryNode, load_query
from src.core.tagging import EntityKind, EntityTag, classify_entity
from src.utils.log_utils import get_logger

logger = get_logger(__name__)

PROCESS_NAMES = ("bash", "python3", "sshd", "cron", "nginx", "vim")

# name templates whose default tag is the key
FILE_TEMPLATES: dict[EntityTag, str] = {
    EntityTag.FA: "/home/u{n}/.ssh/id_rsa",
    EntityTag.FB: "/etc/nginx/site{n}.conf",
    EntityTag.FC: "/var/log/app{n}.log",
    EntityTag.FD: "/usr/lib/libx{n}.so",
    EntityTag.FE: "/home/u/tool{n}.exe",
    EntityTag.FF: "/tmp/stage{n}",
    EntityTag.FG: "/home/u/notes{n}.txt",
}

QUERY_OPS = tuple(op for op in EventType if op is not EventType.EXIT)


@dataclass
class SyntheticInstance:
    query: QueryGraph
    records: list[ParsedRecord]
    planted: dict[str, str]

    @property
    def attack_nodes(self) -> set[str]:
        return set(self.planted.values())


@dataclass
class SyntheticStream:
    queries: list[QueryGraph]
    records: list[ParsedRecord]
    attack_nodes: set[str] = field(default_factory=set)
    attacks: int = 0


class _Namer:
    """Fresh uids and tag-consistent names."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.entities: dict[str, Entity] = {}
        self._n = 0

    def _next(self) -> int:
        self._n += 1
        return self._n

    def make(self, tag: EntityTag, name: Optional[str] = None) -> str:
        n = self._next()
        kind = tag.kind
        if name is None:
            if kind is EntityKind.PROCESS:
                name = self.rng.choice(PROCESS_NAMES)
            elif kind is EntityKind.SOCKET:
                name = f"10.0.{n // 250}.{n % 250}:{self.rng.choice((22, 80, 443, 8080))}"
            elif kind is EntityKind.REGISTRY:
                name = f"HKLM/Software/Key{n}"
            else:
                name = FILE_TEMPLATES[tag].format(n=n)
        uid = f"{kind.value[0]}{n}"
        self.entities[uid] = Entity(uid, kind, name, classify_entity(kind, name))
        return uid


def _random_tag(rng: random.Random, kind: EntityKind) -> EntityTag:
    if kind is EntityKind.PROCESS:
        return EntityTag.P
    if kind is EntityKind.SOCKET:
        return EntityTag.S
    if kind is EntityKind.REGISTRY:
        return EntityTag.R
    return rng.choice(list(FILE_TEMPLATES))


def _object_kind(rng: random.Random, op: EventType) -> EntityKind:
    # registry objects are legal for read/write but rare in practice
    kinds = sorted(EVENT_TABLE[op].object_kinds, key=lambda k: k.value)
    plain = [k for k in kinds if k is not EntityKind.REGISTRY]
    return rng.choice(plain or kinds)


def random_query(
    rng: random.Random,
    edges: int,
    *,
    query_id: str = "q",
    patterned: bool = False,
    reuse: float = 0.25,
) -> QueryGraph:
    """
    A valid random query graph with `edges` edges on distinct steps.

    Each edge hangs off an existing process node; its object is a new node or,
    with probability `reuse`, an existing node of the right kind.
    """
    nodes: dict[str, QueryNode] = {}

    def add_node(tag: EntityTag) -> str:
        qid = f"n{len(nodes)}"
        pattern = None
        if tag is EntityTag.P and (patterned or rng.random() < 0.3):
            pattern = f"^{rng.choice(PROCESS_NAMES)}$"
        nodes[qid] = QueryNode(qid, tag, pattern, (qid,), None)
        return qid

    add_node(EntityTag.P)
    built: list[QueryEdge] = []
    seen: set[tuple[str, str, EventType]] = set()
    while len(built) < edges:
        op = rng.choice(QUERY_OPS)
        kind = _object_kind(rng, op)
        subject = rng.choice([q for q, n in nodes.items() if n.tag is EntityTag.P])
        existing = [q for q, n in nodes.items() if n.tag.kind is kind and q != subject]
        if existing and rng.random() < reuse:
            obj = rng.choice(existing)
        else:
            obj = add_node(_random_tag(rng, kind))
        if EVENT_TABLE[op].direction is Direction.FORWARD:
            src, dst = subject, obj
        else:
            src, dst = obj, subject
        if (src, dst, op) in seen:
            continue
        seen.add((src, dst, op))
        built.append(QueryEdge(src, dst, op, len(built) + 1))

    doc = {
        "id": query_id,
        "nodes": [{"qid": n.qid, "tag": n.tag.value, "name_pattern": n.name_pattern} for n in nodes.values()],
        "edges": [{"src": e.src, "dst": e.dst, "op": e.op.value, "step": e.step} for e in built],
    }
    return load_query(doc)


def _to_records(
    timeline: list[tuple[int, str, str, EventType]], entities: dict[str, Entity]
) -> list[ParsedRecord]:
    """Records in the given arrival order; seq is the arrival index."""
    declared: set[str] = set()
    records = []
    for seq, (t, s, o, op) in enumerate(timeline):
        fresh = []
        for uid in (s, o):
            if uid not in declared:
                declared.add(uid)
                fresh.append(entities[uid])
        records.append(ParsedRecord(Event(s, o, op, t, seq), fresh))
    return records


# -------------------- Small instances (oracle comparisons) --------------------


def _est_hops(
    rng: random.Random, namer: _Namer, start: str, hops: int, budget: int
) -> tuple[list[tuple[str, str, EventType]], str]:
    """Planted transfer chain from `start`; returns its events and the labeled process."""
    events: list[tuple[str, str, EventType]] = []
    current = start
    for _ in range(hops):
        if budget - len(namer.entities) < 2:
            break
        style = rng.choice(("fork", "inject", "exec"))
        if style == "exec":
            payload = namer.make(EntityTag.FE)
            runner = namer.make(EntityTag.P)
            events += [(current, payload, EventType.WRITE), (runner, payload, EventType.EXECUTE)]
            current = runner
        else:
            child = namer.make(EntityTag.P)
            op = EventType.FORK if style == "fork" else EventType.INJECT
            events.append((current, child, op))
            current = child
    return events, current


def random_instance(
    rng: random.Random,
    *,
    max_entities: int = 30,
    max_edges: int = 4,
    noise_events: int = 20,
    decoys: int = 4,
) -> SyntheticInstance:
    """
    A query graph plus a small event log holding one planted realization,
    some transfer chains inside it, decoy entities and random noise.
    """
    query = random_query(rng, rng.randint(1, max_edges), query_id=f"rq{rng.randrange(10**6)}", patterned=True)
    namer = _Namer(rng)
    planted: dict[str, str] = {}
    for qid, node in query.nodes.items():
        name = node.name_pattern.strip("^$") if node.name_pattern else None
        planted[qid] = namer.make(node.tag, name)
    for _ in range(decoys):
        if len(namer.entities) >= max_entities - 4:
            break
        node = query.nodes[rng.choice(list(query.nodes))]
        namer.make(node.tag, node.name_pattern.strip("^$") if node.name_pattern else None)

    plant: list[tuple[str, str, EventType]] = []
    bound: set[str] = set()
    for edge in query.sequence:
        actor = planted[edge.subject]
        if edge.subject in bound and rng.random() < 0.5:
            chain, actor = _est_hops(rng, namer, actor, rng.randint(1, 3), max_entities)
            plant.extend(chain)
        plant.append((actor, planted[edge.object], edge.op))
        bound.update((edge.subject, edge.object))

    timeline: list[tuple[int, str, str, EventType]] = []
    t = 10
    for s, o, op in plant:
        t += rng.randint(0, 3)
        timeline.append((t, s, o, op))
    used = {(s, o, op) for s, o, op in plant}

    uids = list(namer.entities)
    processes = [u for u in uids if namer.entities[u].kind is EntityKind.PROCESS]
    noise: list[tuple[int, str, str, EventType]] = []
    attempts = 0
    while len(noise) < noise_events and attempts < noise_events * 10:
        attempts += 1
        op = rng.choice(QUERY_OPS)
        s = rng.choice(processes)
        kinds = EVENT_TABLE[op].object_kinds
        objects = [u for u in uids if namer.entities[u].kind in kinds and u != s]
        if not objects:
            continue
        o = rng.choice(objects)
        if (s, o, op) in used:
            continue
        used.add((s, o, op))
        noise.append((rng.randint(0, t + 10), s, o, op))

    # stable sort keeps the planted order among equal timestamps
    merged = sorted(timeline + noise, key=lambda item: item[0])
    return SyntheticInstance(query, _to_records(merged, namer.entities), planted)


# -------------------- Streams (incremental, eviction, memory) --------------------

STREAM_QUERY = {
    "id": "exfil",
    "nodes": [
        {"qid": "shell", "tag": "P", "name_pattern": "^bash$"},
        {"qid": "secret", "tag": "Fa"},
        {"qid": "drop", "tag": "Ff"},
        {"qid": "remote", "tag": "S"},
    ],
    "edges": [
        {"src": "secret", "dst": "shell", "op": "read", "step": 1},
        {"src": "shell", "dst": "drop", "op": "write", "step": 2},
        {"src": "shell", "dst": "remote", "op": "connect", "step": 3},
    ],
}


def synthetic_stream(
    seed: int,
    *,
    events: int = 5_000,
    duration_s: float = 4 * 3600,
    lifetime_s: float = 600,
    attack_every_s: float = 1800,
    jitter_us: int = 0,
    replay_rate: float = 0.0,
    shared_files: int = 12,
) -> SyntheticStream:
    """
    Background processes plus periodic planted attacks against STREAM_QUERY.

    Every background process lives for at most `lifetime_s` and writes only
    files of its own, so the branches it opens go quiet once it is gone. bash
    processes read shared secrets but never connect, which leaves their
    branches open. Arrival order is key order perturbed by up to `jitter_us`;
    `replay_rate` re-sends a fraction of records a little later.
    """
    rng = random.Random(seed)
    namer = _Namer(rng)
    duration = int(duration_s * MICROS)
    lifetime = int(lifetime_s * MICROS)

    secrets = [namer.make(EntityTag.FA) for _ in range(max(1, shared_files // 4))]
    libraries = [namer.make(EntityTag.FD) for _ in range(max(1, shared_files // 4))]
    documents = [namer.make(EntityTag.FG) for _ in range(max(1, shared_files // 2))]
    sockets = [namer.make(EntityTag.S) for _ in range(8)]

    raw: list[tuple[int, str, str, EventType]] = []
    attack_nodes: set[str] = set()
    attacks = 0

    attack_at = int(attack_every_s * MICROS) // 2
    while attack_at < duration - 3 * 60 * MICROS:
        shell = namer.make(EntityTag.P, "bash")
        secret = namer.make(EntityTag.FA)
        drop = namer.make(EntityTag.FF)
        helper = namer.make(EntityTag.P, "curl")
        remote = namer.make(EntityTag.S)
        t = attack_at
        raw += [
            (t, shell, secret, EventType.READ),
            (t + 40 * MICROS, shell, drop, EventType.WRITE),
            (t + 90 * MICROS, shell, helper, EventType.FORK),
            (t + 150 * MICROS, helper, remote, EventType.CONNECT),
        ]
        attack_nodes |= {shell, secret, drop, remote}
        attacks += 1
        attack_at += int(attack_every_s * MICROS)

    per_process = 8
    while len(raw) < events:
        name = rng.choice(("bash", "bash", "python3", "cron", "vim"))
        proc = namer.make(EntityTag.P, name)
        start = rng.randrange(0, max(1, duration - lifetime))
        span = rng.randint(lifetime // 4, lifetime)
        times = sorted(rng.randrange(start, start + span) for _ in range(per_process))
        own: list[str] = []
        for t in times:
            roll = rng.random()
            if roll < 0.3:
                source = rng.choice(secrets if name == "bash" else documents)
                raw.append((t, proc, source, EventType.READ))
            elif roll < 0.55:
                if not own or rng.random() < 0.5:
                    own.append(namer.make(rng.choice((EntityTag.FF, EntityTag.FG))))
                raw.append((t, proc, rng.choice(own), EventType.WRITE))
            elif roll < 0.7:
                raw.append((t, proc, rng.choice(libraries), EventType.LOAD))
            elif roll < 0.85 and name in ("python3", "cron"):
                raw.append((t, proc, rng.choice(sockets), EventType.CONNECT))
            elif name == "cron":
                child = namer.make(EntityTag.P, "python3")
                raw.append((t, proc, child, EventType.FORK))
            else:
                raw.append((t, proc, rng.choice(documents), EventType.READ))

    raw.sort(key=lambda item: item[0])
    if jitter_us or replay_rate:
        arrival = []
        for index, item in enumerate(raw):
            arrival.append((item[0] + rng.randint(0, jitter_us), index, item))
        arrival.sort(key=lambda a: (a[0], a[1]))
        raw = [item for _, _, item in arrival]

    records = _to_records(raw, namer.entities)
    if replay_rate:
        replayed: list[ParsedRecord] = []
        for i, record in enumerate(records):
            replayed.append(record)
            if rng.random() < replay_rate:
                replayed.append(ParsedRecord(record.event, []))
        records = replayed

    logger.debug(f"Synthetic stream seed={seed}: {len(records)} records, {attacks} attacks")
    return SyntheticStream([load_query(STREAM_QUERY)], records, attack_nodes, attacks)


# -------------------- Labeled scenario (mutation, ablation) --------------------

SCENARIO_QUERY = {
    "id": "implant",
    "nodes": [
        {"qid": "shell", "tag": "P", "name_pattern": "^bash$"},
        {"qid": "secret", "tag": "Fa"},
        {"qid": "drop", "tag": "Ff"},
        {"qid": "payload", "tag": "Fe"},
        {"qid": "c2", "tag": "S"},
    ],
    "edges": [
        {"src": "secret", "dst": "shell", "op": "read", "step": 1},
        {"src": "shell", "dst": "drop", "op": "write", "step": 2},
        {"src": "shell", "dst": "payload", "op": "write", "step": 3},
        {"src": "shell", "dst": "payload", "op": "execute", "step": 4},
        {"src": "shell", "dst": "c2", "op": "connect", "step": 5},
        {"src": "shell", "dst": "c2", "op": "send", "step": 6},
    ],
}


def labeled_scenario(seed: int = 0, *, background: int = 40) -> SyntheticInstance:
    """
    A six-step implant scenario whose attack events are all performed by one
    shell, surrounded by unrelated background activity.
    """
    rng = random.Random(seed)
    namer = _Namer(rng)
    shell = namer.make(EntityTag.P, "bash")
    secret = namer.make(EntityTag.FA, "/home/victim/.ssh/id_rsa")
    drop = namer.make(EntityTag.FF, "/tmp/.cache_x")
    payload = namer.make(EntityTag.FE, "/home/victim/upd.exe")
    c2 = namer.make(EntityTag.S, "203.0.113.7:443")
    timeline = [
        (100 * MICROS, shell, secret, EventType.READ),
        (200 * MICROS, shell, drop, EventType.WRITE),
        (300 * MICROS, shell, payload, EventType.WRITE),
        (400 * MICROS, shell, payload, EventType.EXECUTE),
        (500 * MICROS, shell, c2, EventType.CONNECT),
        (600 * MICROS, shell, c2, EventType.SEND),
    ]
    others = [namer.make(EntityTag.P, name) for name in ("sshd", "cron", "vim")]
    docs = [namer.make(EntityTag.FG) for _ in range(4)]
    for _ in range(background):
        proc = rng.choice(others)
        op = rng.choice((EventType.READ, EventType.WRITE))
        timeline.append((rng.randrange(0, 700) * MICROS, proc, rng.choice(docs), op))
    timeline.sort(key=lambda item: item[0])

    query = load_query(SCENARIO_QUERY)
    planted = {"shell": shell, "secret": secret, "drop": drop, "payload": payload, "c2": c2}
    return SyntheticInstance(query, _to_records(timeline, namer.entities), planted)
