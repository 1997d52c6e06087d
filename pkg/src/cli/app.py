"""
Command-line surface.

    provhunt ingest  --events log.jsonl
    provhunt hunt    --query q.json --events log.jsonl --out alerts.jsonl
    provhunt watch   --query q.json --events day1.jsonl --events day2.jsonl --t-forget 21600
    provhunt mutate  --events log.jsonl --labels labels.json --strategy II --percent 50 --out mutated.jsonl
    provhunt verify  --trials 200 --seed 7
    provhunt metrics --alerts alerts.jsonl --labels labels.json
    provhunt compact --store branch_store.db

Alerts are written one JSON object per line. Failures print one JSON error
record on stderr and exit with 1 (usage), 2 (data) or 3 (internal).
"""

import functools
import json
import random
import sys
from pathlib import Path
from typing import Iterable, Optional

import typer

from src.cli.config import RunConfig
from src.config import DEFAULT_ORACLE_CAP, DEFAULT_T_FORGET_US, MICROS
from src.core.errors import EXIT_INTERNAL, ConfigError, ProvHuntError
from src.core.hunter import Hunter
from src.core.oracle import brute_force_align, verify_alignment
from src.core.query_graph import QueryGraph, load_query_file
from src.db.branch_repository import BranchRepository
from src.db.branch_store import BranchStore
from src.services.hunting_service import HuntingEngine, hunt_snapshot
from src.services.ingest_service import EventReader, batches_by_file, batches_by_seconds, build_graph
from src.services.metrics_service import TABLE_HEADER, load_labels, metrics_for_files
from src.services.mutation_service import EventLog, MutationSpec, mutate
from src.services.synthetic_service import random_instance
from src.utils.fs_utils import remove_file_quietly
from src.utils.log_utils import configure_logging, get_logger

logger = get_logger(__name__)

app = typer.Typer(add_completion=False, help="Stream threat hunting over provenance graphs.")


def handled(command):
    """Turn ProvHuntError into a JSON record on stderr plus its exit code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except typer.Exit:
            raise
        except ProvHuntError as e:
            typer.echo(json.dumps(e.to_record(), sort_keys=True), err=True)
            raise typer.Exit(e.exit_code)
        except Exception as e:
            logger.exception("Unexpected failure")
            typer.echo(json.dumps({"error": "internal", "message": str(e)}, sort_keys=True), err=True)
            raise typer.Exit(EXIT_INTERNAL)

    return wrapper


def _write_lines(path: Optional[Path], lines: Iterable[str]) -> int:
    count = 0
    if path is None:
        for line in lines:
            typer.echo(line)
            count += 1
        return count
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
            count += 1
    return count


def _load_queries(cfg: RunConfig) -> list[QueryGraph]:
    if not cfg.queries:
        raise ConfigError("At least one --query is required")
    return [load_query_file(p) for p in cfg.queries]


def _read_all(reader: EventReader, paths: Iterable[Path]):
    records = []
    for path in paths:
        records.extend(reader.read_file(path))
    logger.info(f"Read {reader.stats.summary()}")
    return records


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging.")):
    if verbose:
        configure_logging("DEBUG")


# -------------------- ingest / hunt / watch --------------------


@app.command()
@handled
def ingest(
    events: list[Path] = typer.Option(..., "--events", help="Event-record files, in arrival order."),
    rules: Optional[Path] = typer.Option(None, "--rules", help="Tag rule file."),
    reorder_window: Optional[float] = typer.Option(None, "--reorder-window", help="Seconds."),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the summary here instead of stdout."),
):
    """Build the provenance graph and print its statistics."""
    extra = {"reorder_window": reorder_window} if reorder_window is not None else {}
    cfg = RunConfig.build(events=events, rules=rules, out=out, **extra)
    reader = EventReader(cfg.tag_rules())
    records = _read_all(reader, cfg.events)
    graph, stats, pruned = build_graph(records, cfg.settings())
    summary = {
        **graph.summary(),
        "accepted": stats.accepted,
        "unsupported": reader.stats.unsupported,
        "malformed": reader.stats.malformed,
        "pruned_last": pruned,
        "buffered": graph.buffered,
        "late_events": graph.totals.late_events,
    }
    _write_lines(cfg.out, [json.dumps(summary, sort_keys=True)])


@app.command()
@handled
def hunt(
    query: list[Path] = typer.Option(..., "--query", help="Query-graph documents."),
    events: list[Path] = typer.Option(..., "--events", help="Event-record files, in arrival order."),
    rules: Optional[Path] = typer.Option(None, "--rules"),
    c_thr: Optional[int] = typer.Option(None, "--c-thr", help="Hop-limited baseline bound."),
    est_override: Optional[Path] = typer.Option(None, "--est-override", help="Disable EST policy rows."),
    reorder_window: Optional[float] = typer.Option(None, "--reorder-window", help="Seconds."),
    out: Optional[Path] = typer.Option(None, "--out", help="Alert file (JSON lines)."),
):
    """One-shot alignment over the complete event set."""
    extra = {"reorder_window": reorder_window} if reorder_window is not None else {}
    cfg = RunConfig.build(
        queries=query, events=events, rules=rules, c_thr=c_thr, est_override=est_override, out=out, **extra
    )
    queries = _load_queries(cfg)
    settings = cfg.settings()
    records = _read_all(EventReader(cfg.tag_rules()), cfg.events)
    graph, _, _ = build_graph(records, settings)
    alerts = hunt_snapshot(queries, graph, settings)
    written = _write_lines(cfg.out, (a.model_dump_json() for a in alerts))
    logger.info(f"hunt: {written} alerts")


@app.command()
@handled
def watch(
    query: list[Path] = typer.Option(..., "--query"),
    events: list[Path] = typer.Option(..., "--events", help="One batch per file unless --batch-seconds."),
    rules: Optional[Path] = typer.Option(None, "--rules"),
    t_forget: Optional[float] = typer.Option(
        None, "--t-forget", help="Seconds idle before eviction; PROVHUNT_T_FORGET by default, inf keeps everything."
    ),
    c_thr: Optional[int] = typer.Option(None, "--c-thr"),
    est_override: Optional[Path] = typer.Option(None, "--est-override"),
    store: Optional[Path] = typer.Option(None, "--store", help="Branch store file."),
    batch_seconds: Optional[float] = typer.Option(None, "--batch-seconds", min=0.000001),
    alert_fraction: float = typer.Option(1.0, "--alert-fraction", help="Warn at this share of steps."),
    reorder_window: Optional[float] = typer.Option(None, "--reorder-window", help="Seconds."),
    out: Optional[Path] = typer.Option(None, "--out"),
):
    """Incremental hunting, batch by batch, with optional eviction."""
    if t_forget is None and DEFAULT_T_FORGET_US is not None:
        t_forget = DEFAULT_T_FORGET_US / MICROS
    extra = {"reorder_window": reorder_window} if reorder_window is not None else {}
    cfg = RunConfig.build(
        queries=query, events=events, rules=rules, t_forget=t_forget, c_thr=c_thr,
        est_override=est_override, store=store, alert_fraction=alert_fraction, out=out, **extra,
    )
    queries = _load_queries(cfg)
    settings = cfg.settings()

    repository = None
    if settings.t_forget_us is not None:
        path = cfg.store_path()
        if path.exists():
            logger.warning(f"Discarding branch store left at {path} by an earlier run")
            remove_file_quietly(path)
        repository = BranchRepository(BranchStore(path))

    engine = HuntingEngine(queries, settings, repository)
    reader = EventReader(cfg.tag_rules())
    if batch_seconds:
        batches = batches_by_seconds(_read_all(reader, cfg.events), batch_seconds)
    else:
        batches = batches_by_file(reader, cfg.events)
    for batch in batches:
        result = engine.apply_batch(batch.events, batch.entities)
        for warning in result.warnings:
            logger.warning(f"early warning {warning.query_id}: {warning.matched_steps}/{warning.total_steps} steps")
    engine.flush()

    written = _write_lines(cfg.out, (a.model_dump_json() for a in engine.alerts()))
    logger.info(f"watch: {written} alerts, {json.dumps(engine.summary(), sort_keys=True)}")


# -------------------- mutate / verify / metrics / compact --------------------


@app.command("mutate")
@handled
def mutate_cmd(
    events: Path = typer.Option(..., "--events"),
    labels: Path = typer.Option(..., "--labels", help="Ground-truth label file naming the attack nodes."),
    strategy: str = typer.Option(..., "--strategy", help="I, II, III or ALL."),
    percent: float = typer.Option(..., "--percent", min=0, help="Inserted nodes per 100 attack nodes."),
    seed: int = typer.Option(0, "--seed"),
    rules: Optional[Path] = typer.Option(None, "--rules"),
    out: Path = typer.Option(..., "--out", help="Mutated event file."),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Manifest file; stdout by default."),
):
    """Insert benign entities around attack events."""
    cfg = RunConfig.build(events=[events], rules=rules, seed=seed, out=out)
    if strategy.upper() not in ("I", "II", "III", "ALL"):
        raise ConfigError(f"Unknown strategy '{strategy}'", strategy=strategy)
    spec = MutationSpec(strategy=strategy.upper(), percent=percent / 100.0, seed=cfg.seed)
    truth = load_labels(labels)

    rule_set = cfg.tag_rules()
    log = EventLog.from_records(_read_all(EventReader(rule_set), cfg.events))
    result = mutate(log, truth.attack, spec, rule_set)
    _write_lines(cfg.out, result.log.to_lines())
    _write_lines(manifest, [result.manifest.model_dump_json()])


@app.command()
@handled
def verify(
    trials: int = typer.Option(100, "--trials", min=1),
    seed: int = typer.Option(0, "--seed"),
    max_edges: int = typer.Option(4, "--max-edges", min=1, max=6),
    query: Optional[Path] = typer.Option(None, "--query", help="Check one instance instead of random ones."),
    events: Optional[Path] = typer.Option(None, "--events"),
    cap: int = typer.Option(DEFAULT_ORACLE_CAP, "--cap", help="Entity cap for the oracle."),
):
    """Compare hunter alerts with the exhaustive oracle."""
    if (query is None) != (events is None):
        raise ConfigError("--query and --events go together")

    if query is not None:
        cfg = RunConfig.build(queries=[query], events=[events])
        graph, _, _ = build_graph(_read_all(EventReader(), cfg.events))
        cases = [(_load_queries(cfg)[0], graph)]
    else:
        cases = []
        for trial in range(trials):
            instance = random_instance(random.Random(seed * 100_003 + trial), max_edges=max_edges)
            graph, _, _ = build_graph(instance.records)
            cases.append((instance.query, graph))

    mismatches = []
    for index, (q, graph) in enumerate(cases):
        alerts = Hunter(q).hunt(graph)
        oracle = brute_force_align(q, graph, cap=cap)
        hunted = {a.mapping_key(): a.score for a in alerts}
        replay_ok = all(
            verify_alignment(q, graph, m.mapping, m.steps) for m in oracle.matches
        )
        if hunted != oracle.scores() or not replay_ok:
            mismatches.append({"case": index, "query": q.id, "hunter": len(hunted), "oracle": len(oracle.matches)})

    report = {"cases": len(cases), "mismatches": len(mismatches), "details": mismatches[:10]}
    typer.echo(json.dumps(report, sort_keys=True))
    if mismatches:
        raise typer.Exit(EXIT_INTERNAL)


@app.command()
@handled
def metrics(
    alerts: Path = typer.Option(..., "--alerts"),
    labels: Path = typer.Option(..., "--labels"),
    strict_labels: bool = typer.Option(False, "--strict-labels", help="Unlabeled alerted ids are an error."),
    scenario: Optional[str] = typer.Option(None, "--scenario"),
    out: Optional[Path] = typer.Option(None, "--out"),
):
    """Node-level FN/FP, recall and precision."""
    cfg = RunConfig.build(events=[alerts, labels], out=out)
    report = metrics_for_files(alerts, labels, strict=strict_labels, scenario=scenario)
    _write_lines(cfg.out, [report.model_dump_json()])
    if cfg.out is not None:
        typer.echo(TABLE_HEADER)
        typer.echo(report.table_row())


@app.command()
@handled
def compact(store: Path = typer.Option(..., "--store")):
    """Rewrite a branch store without its dead records."""
    if not store.is_file():
        raise ConfigError(f"file not found: {store}", path=str(store))
    kept, dropped = BranchStore(store).compact()
    typer.echo(json.dumps({"kept": kept, "dropped": dropped}, sort_keys=True))


def run() -> None:
    app()


if __name__ == "__main__":
    sys.exit(run())
