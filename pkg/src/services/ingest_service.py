"""
Reading event-record streams.

The reader parses JSON-lines files into events plus entity declarations,
assigns a running sequence number to records that do not carry one, and
counts (rather than raises on) records it has to skip.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from src.config import EngineSettings, MICROS
from src.core.errors import RecordParseError, UnsupportedEventError
from src.core.events import Entity, Event, ParsedRecord, parse_event
from src.core.provenance import IngestStats, ProvenanceGraph
from src.core.tagging import TagRuleSet
from src.utils.log_utils import get_logger

logger = get_logger(__name__)


@dataclass
class ReaderStats:
    lines: int = 0
    parsed: int = 0
    malformed: int = 0
    unsupported: int = 0
    errors: list[dict] = field(default_factory=list, repr=False)

    def summary(self) -> dict[str, int]:
        return {
            "lines": self.lines,
            "parsed": self.parsed,
            "malformed": self.malformed,
            "unsupported": self.unsupported,
        }


@dataclass
class Batch:
    entities: list[Entity]
    events: list[Event]
    label: str = ""


class EventReader:
    """Stateful reader: uid declarations and sequence numbers carry across files."""

    def __init__(self, rules: Optional[TagRuleSet] = None, *, max_errors_kept: int = 100):
        self.rules = rules
        self.seen: set[str] = set()
        self.next_seq = 0
        self.stats = ReaderStats()
        self._max_errors_kept = max_errors_kept

    def iter_lines(self, lines: Iterable[str | bytes], source: str = "<stream>") -> Iterator[ParsedRecord]:
        """Parse lines; raw byte lines that are not valid UTF-8 count as malformed."""
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            self.stats.lines += 1
            try:
                if isinstance(line, bytes):
                    line = _decode_line(line, line_no)
                record = parse_event(
                    line, line_no=line_no, rules=self.rules, seen=self.seen, seq=self.next_seq
                )
            except UnsupportedEventError as e:
                self.stats.unsupported += 1
                self._keep_error(e.to_record(), source)
                continue
            except RecordParseError as e:
                self.stats.malformed += 1
                self._keep_error(e.to_record(), source)
                continue
            self.next_seq = max(self.next_seq, record.event.seq) + 1
            self.stats.parsed += 1
            yield record

    def _keep_error(self, record: dict, source: str) -> None:
        if len(self.stats.errors) < self._max_errors_kept:
            self.stats.errors.append({**record, "source": source})
        logger.warning(f"Skipped record in {source}: {record.get('message')} (line {record.get('line_no')})")

    def read_file(self, path: str | Path) -> list[ParsedRecord]:
        with open(path, "rb") as fh:
            return list(self.iter_lines(fh, str(path)))

    def read_batch(self, path: str | Path) -> Batch:
        return to_batch(self.read_file(path), label=str(path))


def _decode_line(raw: bytes, line_no: int) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise RecordParseError(
            f"Line is not valid UTF-8 (byte {e.start}: {raw[e.start : e.start + 1].hex()})", line_no=line_no
        ) from None


def to_batch(records: Iterable[ParsedRecord], label: str = "") -> Batch:
    entities: list[Entity] = []
    events: list[Event] = []
    for record in records:
        entities.extend(record.entities)
        events.append(record.event)
    return Batch(entities, events, label)


def batches_by_file(reader: EventReader, paths: Iterable[str | Path]) -> Iterator[Batch]:
    """One batch per input file, in the given order."""
    for path in paths:
        yield reader.read_batch(path)


def batches_by_seconds(records: list[ParsedRecord], seconds: float) -> list[Batch]:
    """
    Cut a record list, in arrival order, into windows of `seconds` of event
    time. A window closes at the first record past its end; stragglers stay in
    the window where they arrived.
    """
    if not records:
        return []
    width = max(1, int(seconds * MICROS))
    origin = min(r.event.t for r in records)
    batches: list[Batch] = []
    current = -1
    for record in records:
        index = (record.event.t - origin) // width
        if index > current:
            current = index
            batches.append(Batch([], [], f"window {index}"))
        batches[-1].events.append(record.event)
    return assign_declarations(batches, records)


def assign_declarations(batches: list[Batch], records: list[ParsedRecord]) -> list[Batch]:
    """Move every declaration into the first batch whose events use that uid."""
    catalog: dict[str, Entity] = {}
    for record in records:
        for entity in record.entities:
            catalog.setdefault(entity.uid, entity)
    placed: set[str] = set()
    for batch in batches:
        entities: list[Entity] = []
        for ev in batch.events:
            for uid in (ev.uid_s, ev.uid_o):
                if uid not in placed and uid in catalog:
                    placed.add(uid)
                    entities.append(catalog[uid])
        batch.entities = entities
    return batches


def build_graph(
    records: Iterable[ParsedRecord], settings: Optional[EngineSettings] = None
) -> tuple[ProvenanceGraph, IngestStats, int]:
    """One-shot graph over a complete record set: ingest, flush, prune."""
    settings = settings or EngineSettings()
    graph = ProvenanceGraph(settings.reorder_window_us)
    batch = to_batch(records)
    graph.declare(batch.entities)
    stats = graph.ingest(batch.events)
    stats.merge(graph.flush())
    pruned = graph.prune_isolated()
    logger.info(f"Graph built: {graph.summary()}")
    return graph, stats, pruned
