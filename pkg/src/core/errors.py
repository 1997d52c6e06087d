"""
Exception hierarchy.

Every error knows how to render itself as a flat, machine-parsable record so
the CLI can print one JSON line on failure and exit with the matching code.
"""

from typing import Any

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class ProvHuntError(Exception):
    """Base class for every error raised by the hunter."""

    kind = "internal"
    exit_code = EXIT_INTERNAL

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self) -> dict[str, Any]:
        return {"error": self.kind, "message": self.message, **self.details}


class ConfigError(ProvHuntError):
    kind = "config"
    exit_code = EXIT_USAGE


class RecordParseError(ProvHuntError):
    """A record that does not follow the event-record schema."""

    kind = "parse"
    exit_code = EXIT_DATA

    def __init__(self, message: str, line_no: int | None = None, field: str | None = None):
        super().__init__(message, line_no=line_no, field=field)
        self.line_no = line_no
        self.field = field


class UnsupportedEventError(ProvHuntError):
    """Unknown op, or an op applied to entity kinds the event table does not allow."""

    kind = "unsupported_event"
    exit_code = EXIT_DATA

    def __init__(self, message: str, line_no: int | None = None, op: str | None = None):
        super().__init__(message, line_no=line_no, op=op)
        self.line_no = line_no
        self.op = op


class LateEventError(ProvHuntError):
    kind = "late_event"
    exit_code = EXIT_DATA


class EntityNotFoundError(ProvHuntError):
    kind = "not_found"
    exit_code = EXIT_DATA

    def __init__(self, uid: str):
        super().__init__(f"Unknown entity: {uid}", uid=uid)
        self.uid = uid


class QueryValidationError(ProvHuntError):
    kind = "query_validation"
    exit_code = EXIT_DATA


class StoreWriteError(ProvHuntError):
    kind = "store_write"
    exit_code = EXIT_INTERNAL


class CorruptRecordError(ProvHuntError):
    kind = "corrupt_record"
    exit_code = EXIT_DATA


class OracleSizeError(ProvHuntError):
    kind = "oracle_size"
    exit_code = EXIT_USAGE


class MutationError(ProvHuntError):
    kind = "mutation"
    exit_code = EXIT_DATA

    def __init__(self, message: str, strategy: str):
        super().__init__(message, strategy=strategy)
        self.strategy = strategy


class LabelError(ProvHuntError):
    kind = "label"
    exit_code = EXIT_DATA
