"""
Entity tags and the ordered heuristics that assign them.

Files are tagged by the first matching rule in priority order Fa..Ff; Fg is
the catch-all. Processes, registry keys and sockets map to a single tag each.
"""

import fnmatch
import json
from enum import Enum
from pathlib import Path
from typing import Iterable, Literal

from pydantic import BaseModel, TypeAdapter, ValidationError

from src.core.errors import ConfigError
from src.utils.path_utils import normalize_entity_name


class EntityKind(str, Enum):
    PROCESS = "process"
    FILE = "file"
    REGISTRY = "registry"
    SOCKET = "socket"


class EntityTag(str, Enum):
    P = "P"
    FA = "Fa"
    FB = "Fb"
    FC = "Fc"
    FD = "Fd"
    FE = "Fe"
    FF = "Ff"
    FG = "Fg"
    R = "R"
    S = "S"

    @property
    def kind(self) -> EntityKind:
        return TAG_KIND[self]

    @property
    def is_file(self) -> bool:
        return TAG_KIND[self] is EntityKind.FILE


TAG_KIND: dict[EntityTag, EntityKind] = {
    EntityTag.P: EntityKind.PROCESS,
    EntityTag.R: EntityKind.REGISTRY,
    EntityTag.S: EntityKind.SOCKET,
    **{t: EntityKind.FILE for t in (EntityTag.FA, EntityTag.FB, EntityTag.FC, EntityTag.FD,
                                    EntityTag.FE, EntityTag.FF, EntityTag.FG)},
}

FILE_TAG_PRIORITY = (
    EntityTag.FA,
    EntityTag.FB,
    EntityTag.FC,
    EntityTag.FD,
    EntityTag.FE,
    EntityTag.FF,
)


class TagRule(BaseModel, frozen=True):
    """One (tag, match-kind, pattern) line of the rule configuration."""

    tag: EntityTag
    match: Literal["glob", "extension", "prefix"]
    pattern: str

    def matches(self, normalized_name: str) -> bool:
        pattern = self.pattern.lower().replace("\\", "/")
        if self.match == "glob":
            return fnmatch.fnmatchcase(normalized_name, pattern)
        if self.match == "prefix":
            return normalized_name.startswith(pattern)
        return normalized_name.endswith(pattern)


DEFAULT_TAG_RULES: tuple[TagRule, ...] = tuple(
    TagRule(tag=tag, match=match, pattern=pattern)
    for tag, match, pattern in [
        # user configuration sensitive files
        (EntityTag.FA, "glob", "/etc/passwd"),
        (EntityTag.FA, "glob", "/etc/shadow"),
        (EntityTag.FA, "glob", "/etc/gshadow"),
        (EntityTag.FA, "glob", "/etc/group"),
        (EntityTag.FA, "glob", "/etc/sudoers"),
        (EntityTag.FA, "glob", "*boot.ini"),
        (EntityTag.FA, "glob", "*/.ssh/*"),
        (EntityTag.FA, "glob", "*/system32/config/sam"),
        # application configuration sensitive files
        (EntityTag.FB, "prefix", "/etc/mysql/"),
        (EntityTag.FB, "prefix", "/etc/apache2/"),
        (EntityTag.FB, "prefix", "/etc/nginx/"),
        (EntityTag.FB, "extension", ".cnf"),
        (EntityTag.FB, "glob", "/etc/*.conf"),
        # log-sensitive documents
        (EntityTag.FC, "prefix", "/var/log/"),
        (EntityTag.FC, "prefix", "/etc/httpd/logs"),
        (EntityTag.FC, "extension", ".log"),
        # libraries
        (EntityTag.FD, "extension", ".lib"),
        (EntityTag.FD, "extension", ".a"),
        (EntityTag.FD, "extension", ".dll"),
        (EntityTag.FD, "extension", ".so"),
        (EntityTag.FD, "glob", "*.so.*"),
        # executables
        (EntityTag.FE, "extension", ".exe"),
        (EntityTag.FE, "extension", ".vbs"),
        (EntityTag.FE, "extension", ".com"),
        (EntityTag.FE, "extension", ".scr"),
        (EntityTag.FE, "extension", ".msi"),
        (EntityTag.FE, "extension", ".ps1"),
        # temporary files
        (EntityTag.FF, "prefix", "/tmp/"),
        (EntityTag.FF, "prefix", "/var/tmp/"),
        (EntityTag.FF, "glob", "*/temp/*"),
        (EntityTag.FF, "glob", "%temp%*"),
    ]
)


class TagRuleSet:
    """Ordered file-tag rules, grouped by tag and evaluated in Fa..Ff priority."""

    def __init__(self, rules: Iterable[TagRule] = DEFAULT_TAG_RULES):
        self.rules: tuple[TagRule, ...] = tuple(rules)
        for rule in self.rules:
            if not rule.tag.is_file or rule.tag is EntityTag.FG:
                raise ConfigError(
                    f"Tag rules may only target Fa..Ff, got {rule.tag.value}",
                    pattern=rule.pattern,
                )
        self._by_tag: dict[EntityTag, list[TagRule]] = {tag: [] for tag in FILE_TAG_PRIORITY}
        for rule in self.rules:
            self._by_tag[rule.tag].append(rule)

    def classify_file(self, name: str) -> EntityTag:
        normalized = normalize_entity_name(name)
        for tag in FILE_TAG_PRIORITY:
            if any(rule.matches(normalized) for rule in self._by_tag[tag]):
                return tag
        return EntityTag.FG

    @classmethod
    def from_file(cls, path: str | Path) -> "TagRuleSet":
        """Load an ordered JSON list of {tag, match, pattern} objects."""
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            rules = TypeAdapter(list[TagRule]).validate_python(raw)
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise ConfigError(f"Invalid tag rule file {path}: {e}", path=str(path)) from e
        return cls(rules)


DEFAULT_RULE_SET = TagRuleSet()


def classify_entity(kind: EntityKind | str, name: str, rules: TagRuleSet | None = None) -> EntityTag:
    """Assign the semantic tag of an entity; total and deterministic for fixed rules."""
    kind = EntityKind(kind)
    if kind is EntityKind.PROCESS:
        return EntityTag.P
    if kind is EntityKind.REGISTRY:
        return EntityTag.R
    if kind is EntityKind.SOCKET:
        return EntityTag.S
    return (rules or DEFAULT_RULE_SET).classify_file(name)
