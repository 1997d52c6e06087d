import json

import pytest

from src.core.errors import ConfigError, RecordParseError, UnsupportedEventError
from src.core.events import (
    CLASSIFICATION_TABLE_OPS,
    EVENT_TABLE,
    Direction,
    EventType,
    parse_event,
)
from src.core.tagging import EntityKind, EntityTag, TagRule, TagRuleSet, classify_entity
from src.services.ingest_service import EventReader
from tests.helpers import record_line

P, F, S, R = EntityKind.PROCESS, EntityKind.FILE, EntityKind.SOCKET, EntityKind.REGISTRY

EVENT_ROWS = [
    ("accept", {S}, Direction.BACKWARD),
    ("inject", {P}, Direction.FORWARD),
    ("clone", {P}, Direction.FORWARD),
    ("connect", {S}, Direction.FORWARD),
    ("execute", {F}, Direction.FORWARD),
    ("fork", {P}, Direction.FORWARD),
    ("load", {F}, Direction.BACKWARD),
    ("write", {F, R}, Direction.FORWARD),
    ("receive", {S}, Direction.BACKWARD),
    ("send", {S}, Direction.FORWARD),
    ("exit", {P}, Direction.FORWARD),
    ("unlink", {F}, Direction.FORWARD),
]

SHELL = ("p1", "process", "bash")
PASSWD = ("f1", "file", "/etc/passwd")


@pytest.mark.parametrize("op, objects, direction", EVENT_ROWS)
def test_event_table_rows(op, objects, direction):
    spec = EVENT_TABLE[EventType(op)]
    assert spec.subject_kind is P
    assert set(spec.object_kinds) == objects
    assert spec.direction is direction


def test_classification_table_has_twelve_ops():
    assert len(CLASSIFICATION_TABLE_OPS) == 12
    assert {op.value for op in CLASSIFICATION_TABLE_OPS} == {row[0] for row in EVENT_ROWS}


def test_read_is_backward_and_accepts_registry():
    spec = EVENT_TABLE[EventType.READ]
    assert spec.direction is Direction.BACKWARD
    assert set(spec.object_kinds) == {F, R}


# -------------------- Parsing --------------------


def test_parse_declares_both_endpoints():
    parsed = parse_event(record_line(100, SHELL, PASSWD, "read"), seq=7)
    assert parsed.event.uid_s == "p1"
    assert parsed.event.uid_o == "f1"
    assert parsed.event.op is EventType.READ
    assert parsed.event.key == (100, 7)
    tags = {e.uid: e.tag for e in parsed.entities}
    assert tags == {"p1": EntityTag.P, "f1": EntityTag.FA}


def test_parse_skips_seen_uids():
    seen = {"p1"}
    parsed = parse_event(record_line(100, SHELL, PASSWD, "read"), seen=seen)
    assert [e.uid for e in parsed.entities] == ["f1"]
    assert seen == {"p1", "f1"}


def test_explicit_seq_wins():
    parsed = parse_event(record_line(100, SHELL, PASSWD, "read", seq=3), seq=99)
    assert parsed.event.seq == 3


def test_exit_may_loop():
    parsed = parse_event(record_line(5, SHELL, SHELL, "exit"))
    assert parsed.event.uid_s == parsed.event.uid_o == "p1"
    assert len(parsed.entities) == 1


@pytest.mark.parametrize(
    "line, error, field",
    [
        ("not json", RecordParseError, None),
        ("[1, 2]", RecordParseError, None),
        (record_line(-1, SHELL, PASSWD, "read"), RecordParseError, "t"),
        (json.dumps({"t": 1, "s": "p1", "s_kind": "process", "op": "read"}), RecordParseError, "s_name"),
        (record_line(1, SHELL, ("p2", "thread", "x"), "fork"), RecordParseError, "o_kind"),
        (record_line(1, SHELL, SHELL, "fork"), RecordParseError, "o"),
        (record_line(1, SHELL, PASSWD, "read", seq=-2), RecordParseError, "seq"),
    ],
)
def test_malformed_records(line, error, field):
    with pytest.raises(error) as info:
        parse_event(line, line_no=4)
    assert info.value.line_no == 4
    assert info.value.field == field


def test_unknown_op_is_unsupported():
    with pytest.raises(UnsupportedEventError) as info:
        parse_event(record_line(1, SHELL, PASSWD, "mmap"))
    assert info.value.op == "mmap"


def test_op_on_wrong_kinds_is_unsupported():
    with pytest.raises(UnsupportedEventError):
        parse_event(record_line(1, SHELL, ("s1", "socket", "1.2.3.4:80"), "write"))


def test_reader_counts_and_numbers_records():
    lines = [
        record_line(1, SHELL, PASSWD, "read"),
        "{broken",
        record_line(2, SHELL, ("s1", "socket", "1.2.3.4:80"), "execute"),
        "",
        record_line(3, SHELL, ("f2", "file", "/tmp/x"), "write"),
    ]
    reader = EventReader()
    records = list(reader.iter_lines(lines))
    assert [r.event.seq for r in records] == [0, 1]
    assert reader.stats.summary() == {"lines": 4, "parsed": 2, "malformed": 1, "unsupported": 1}
    assert len(reader.stats.errors) == 2
    # p1 was declared by the first record only
    assert [e.uid for e in records[1].entities] == ["f2"]


def test_reader_skips_lines_that_are_not_utf8(fixtures_dir, tmp_path):
    path = tmp_path / "mixed.jsonl"
    path.write_bytes(b"\xff\xfe{\"t\": 1}\n" + (fixtures_dir / "ztmp_events.jsonl").read_bytes())
    reader = EventReader()
    records = reader.read_file(path)
    assert len(records) == 18
    assert reader.stats.summary() == {"lines": 19, "parsed": 18, "malformed": 1, "unsupported": 0}
    (error,) = reader.stats.errors
    assert (error["error"], error["line_no"], error["source"]) == ("parse", 1, str(path))
    assert "UTF-8" in error["message"]


def test_reader_keeps_non_ascii_names(tmp_path):
    name = "/home/j\u00fcrgen/\u62a5\u544a.docx"
    line = json.dumps(json.loads(record_line(1, SHELL, ("f9", "file", name), "write")), ensure_ascii=False)
    path = tmp_path / "names.jsonl"
    path.write_bytes(line.encode("utf-8") + b"\n")
    reader = EventReader()
    (record,) = reader.read_file(path)
    assert {e.uid: e.name for e in record.entities}["f9"] == name
    assert reader.stats.malformed == 0


# -------------------- Tagging --------------------


@pytest.mark.parametrize(
    "name, tag",
    [
        ("/etc/passwd", EntityTag.FA),
        ("/home/alice/.ssh/id_rsa", EntityTag.FA),
        ("/etc/mysql/my.cnf", EntityTag.FB),
        ("/etc/resolv.conf", EntityTag.FB),
        ("/var/log/auth.log", EntityTag.FC),
        ("/usr/lib/libssl.so.1.1", EntityTag.FD),
        ("C:\\Windows\\Temp\\EVIL.EXE", EntityTag.FE),
        ("/home/bob/update.ps1", EntityTag.FE),
        ("/tmp/payload", EntityTag.FF),
        ("/home/u/readme.md", EntityTag.FG),
        # earlier tags win
        ("/tmp/debug.log", EntityTag.FC),
        ("/tmp/libhook.so", EntityTag.FD),
    ],
)
def test_default_file_tags(name, tag):
    assert classify_entity(EntityKind.FILE, name) is tag


@pytest.mark.parametrize(
    "kind, tag",
    [("process", EntityTag.P), ("socket", EntityTag.S), ("registry", EntityTag.R)],
)
def test_non_file_tags(kind, tag):
    assert classify_entity(kind, "/etc/passwd") is tag


def test_rule_file_replaces_defaults(fixtures_dir):
    rules = TagRuleSet.from_file(fixtures_dir / "tag_rules.json")
    assert classify_entity(F, "/srv/secrets/key", rules) is EntityTag.FA
    assert classify_entity(F, "/opt/tool.BIN", rules) is EntityTag.FE
    assert classify_entity(F, "/scratch/a", rules) is EntityTag.FF
    assert classify_entity(F, "/etc/passwd", rules) is EntityTag.FG


def test_rules_cannot_target_fg():
    with pytest.raises(ConfigError):
        TagRuleSet([TagRule(tag=EntityTag.FG, match="prefix", pattern="/x")])


def test_bad_rule_file(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text('[{"tag": "Fa", "match": "regex", "pattern": "x"}]', encoding="utf-8")
    with pytest.raises(ConfigError):
        TagRuleSet.from_file(path)
