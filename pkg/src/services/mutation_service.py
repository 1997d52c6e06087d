"""
Adversarial mutation of a labeled event log.

Strategy I   (read/write anchors): benign process <-> file read/write chains
             hang off the anchor's acting process.
Strategy II  (execute anchors):    the anchor is re-routed through a fork chain
             of fresh benign processes; the last one performs the execute.
Strategy III (connect/send/receive anchors): same re-routing, with network-flavoured
             intermediaries.
ALL          splits the budget evenly across the three templates.

The insertion budget is floor(percent * |attack nodes|) fresh nodes, dealt
round-robin over the applicable anchors. Inserted events sit between the
anchor and the attack event right before it; afterwards all sequence numbers
are renumbered so the original events keep their relative order.
"""

import math
import random
from dataclasses import dataclass
from typing import Literal, Optional

from pydantic import BaseModel, Field

from src.core.errors import MutationError
from src.core.events import Entity, Event, EventType, ParsedRecord, serialize_event
from src.core.tagging import EntityKind, TagRuleSet, classify_entity
from src.utils.log_utils import get_logger

logger = get_logger(__name__)

Strategy = Literal["I", "II", "III", "ALL"]

ANCHOR_OPS: dict[str, frozenset[EventType]] = {
    "I": frozenset({EventType.READ, EventType.WRITE}),
    "II": frozenset({EventType.EXECUTE}),
    "III": frozenset({EventType.CONNECT, EventType.SEND, EventType.RECEIVE}),
}

BENIGN_PROCESSES = ("updater", "indexer", "cron", "logrotate", "syncd", "thumbnailer", "backupd")
NETWORK_PROCESSES = ("curl", "wget", "ntpd", "dnsmasq", "sshd", "rsync", "apt-get")
BENIGN_FILES = ("/home/user/docs/report", "/home/user/notes/todo", "/srv/share/readme", "/opt/app/data")


class MutationSpec(BaseModel):
    strategy: Strategy
    percent: float = Field(ge=0.0, description="insertion budget as a fraction of attack nodes")
    seed: int = 0


class MutationManifest(BaseModel):
    strategy: Strategy
    percent: float
    seed: int
    budget: int
    inserted_nodes: list[str] = Field(default_factory=list)
    inserted_events: list[dict] = Field(default_factory=list)
    rerouted: list[dict] = Field(default_factory=list)
    per_template: dict[str, int] = Field(default_factory=dict)


@dataclass
class EventLog:
    """Events in key order plus the entities they reference."""

    entities: dict[str, Entity]
    events: list[Event]

    @classmethod
    def from_records(cls, records: list[ParsedRecord]) -> "EventLog":
        entities: dict[str, Entity] = {}
        for record in records:
            for entity in record.entities:
                entities.setdefault(entity.uid, entity)
        return cls(entities, sorted((r.event for r in records), key=lambda e: e.key))

    def to_lines(self) -> list[str]:
        return [
            serialize_event(ev, self.entities[ev.uid_s], self.entities[ev.uid_o]) for ev in self.events
        ]

    def to_records(self) -> list[ParsedRecord]:
        declared: set[str] = set()
        records = []
        for ev in self.events:
            fresh = []
            for uid in (ev.uid_s, ev.uid_o):
                if uid not in declared:
                    declared.add(uid)
                    fresh.append(self.entities[uid])
            records.append(ParsedRecord(ev, fresh))
        return records


@dataclass
class _Insertion:
    # sort position: (t, rank); original events use their index as rank
    t: int
    rank: float
    event: Event


@dataclass
class MutationResult:
    log: EventLog
    manifest: MutationManifest


class Mutator:
    def __init__(self, log: EventLog, attack_nodes: set[str], spec: MutationSpec,
                 rules: Optional[TagRuleSet] = None):
        if not attack_nodes:
            raise MutationError("attack node set is empty", spec.strategy)
        self.log = log
        self.attack = attack_nodes
        self.spec = spec
        self.rules = rules
        self.rng = random.Random(spec.seed)
        self.entities = dict(log.entities)
        self.insertions: list[_Insertion] = []
        self.rerouted: dict[int, Event] = {}
        self.inserted_nodes: list[str] = []
        self._counter = 0

    # -------------------- Anchors --------------------

    def anchors(self, template: str) -> list[tuple[int, int]]:
        """(anchor index, preceding attack event index) pairs for one template."""
        found = []
        previous: Optional[int] = None
        bound: set[str] = set()
        for i, ev in enumerate(self.log.events):
            if ev.uid_s not in self.attack or ev.uid_o not in self.attack:
                continue
            if (
                ev.op in ANCHOR_OPS[template]
                and previous is not None
                and ev.uid_s in bound
                and i not in self.rerouted
            ):
                found.append((i, previous))
            previous = i
            bound.update((ev.uid_s, ev.uid_o))
        return found

    # -------------------- Fresh entities --------------------

    def _fresh(self, kind: EntityKind, template: str) -> str:
        self._counter += 1
        uid = f"benign-{template.lower()}-{self._counter}"
        while uid in self.entities:
            self._counter += 1
            uid = f"benign-{template.lower()}-{self._counter}"
        if kind is EntityKind.PROCESS:
            pool = NETWORK_PROCESSES if template == "III" else BENIGN_PROCESSES
            name = f"{self.rng.choice(pool)}"
        else:
            name = f"{self.rng.choice(BENIGN_FILES)}_{self._counter}.txt"
        self.entities[uid] = Entity(uid, kind, name, classify_entity(kind, name, self.rules))
        self.inserted_nodes.append(uid)
        return uid

    def _place(self, anchor: int, previous: int, plan: list[tuple[str, str, EventType]]) -> None:
        """Spread a planned event chain strictly between the two attack events."""
        t_prev = self.log.events[previous].t
        t_anchor = self.log.events[anchor].t
        slots = len(plan) + 1
        for j, (s, o, op) in enumerate(plan, start=1):
            t = t_prev + (t_anchor - t_prev) * j // slots
            rank = previous + (anchor - previous) * j / slots
            self.insertions.append(_Insertion(t, rank, Event(s, o, op, t, 0)))

    # -------------------- Templates --------------------

    def insert_chain(self, anchor: int, previous: int, count: int) -> None:
        """Alternating file/process read-write chain hanging off the anchor's process."""
        source = self.log.events[anchor].uid_s
        plan = []
        last = source
        for k in range(count):
            if k % 2 == 0:
                f = self._fresh(EntityKind.FILE, "I")
                plan.append((last, f, EventType.WRITE))
                last = f
            else:
                p = self._fresh(EntityKind.PROCESS, "I")
                plan.append((p, last, EventType.READ))
                last = p
        self._place(anchor, previous, plan)

    def reroute(self, anchor: int, previous: int, count: int, template: str) -> None:
        """Fork chain P -> B1 -> ... -> Bm; Bm performs the anchor event instead of P."""
        original = self.log.events[anchor]
        plan = []
        parent = original.uid_s
        for _ in range(count):
            child = self._fresh(EntityKind.PROCESS, template)
            plan.append((parent, child, EventType.FORK))
            parent = child
        self._place(anchor, previous, plan)
        self.rerouted[anchor] = Event(parent, original.uid_o, original.op, original.t, original.seq)

    # -------------------- Driver --------------------

    def run(self) -> MutationResult:
        spec = self.spec
        budget = math.floor(spec.percent * len(self.attack) + 1e-9)
        templates = ["I", "II", "III"] if spec.strategy == "ALL" else [spec.strategy]
        shares = {t: budget // len(templates) for t in templates}
        for t in templates[: budget % len(templates)]:
            shares[t] += 1

        manifest = MutationManifest(
            strategy=spec.strategy, percent=spec.percent, seed=spec.seed, budget=budget,
            per_template=shares,
        )
        if budget == 0:
            return MutationResult(EventLog(dict(self.log.entities), list(self.log.events)), manifest)

        for template in templates:
            share = shares[template]
            if share == 0:
                continue
            anchors = self.anchors(template)
            if not anchors:
                raise MutationError(
                    f"Strategy {template} has no applicable attack events", template
                )
            counts = [share // len(anchors)] * len(anchors)
            for i in range(share % len(anchors)):
                counts[i] += 1
            for (anchor, previous), count in zip(anchors, counts):
                if count == 0:
                    continue
                if template == "I":
                    self.insert_chain(anchor, previous, count)
                else:
                    self.reroute(anchor, previous, count, template)

        mutated = self._assemble()
        inserted_set = set(self.inserted_nodes)
        manifest.inserted_nodes = list(self.inserted_nodes)
        manifest.inserted_events = [
            ev.to_dict() for ev in mutated.events if ev.uid_s in inserted_set or ev.uid_o in inserted_set
        ]
        manifest.rerouted = [
            {"original": self.log.events[i].to_dict(), "actor": ev.uid_s} for i, ev in sorted(self.rerouted.items())
        ]
        logger.info(
            f"Mutation {spec.strategy} at {spec.percent:.0%}: {len(self.inserted_nodes)} nodes, "
            f"{len(manifest.inserted_events)} events"
        )
        return MutationResult(mutated, manifest)

    def _assemble(self) -> EventLog:
        merged: list[_Insertion] = [
            _Insertion(ev.t, float(i), self.rerouted.get(i, ev)) for i, ev in enumerate(self.log.events)
        ]
        merged.extend(self.insertions)
        merged.sort(key=lambda item: (item.t, item.rank))
        events = [
            Event(item.event.uid_s, item.event.uid_o, item.event.op, item.t, seq)
            for seq, item in enumerate(merged)
        ]
        return EventLog(self.entities, events)


def mutate(
    log: EventLog,
    attack_nodes: set[str],
    spec: MutationSpec,
    rules: Optional[TagRuleSet] = None,
) -> MutationResult:
    """Mutated copy of `log` plus a manifest of every inserted node and event."""
    return Mutator(log, attack_nodes, spec, rules).run()
