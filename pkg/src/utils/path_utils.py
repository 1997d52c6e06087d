"""
Utilities for path handling.
"""

import os
from typing import Iterable, List


def normalize_path(path: str) -> str:
    """Normalize a filesystem path in a safe way."""
    try:
        return os.path.normpath(path) if path else ""
    except Exception:
        return path


def normalize_entity_name(name: str) -> str:
    """
    Canonical form of an entity name for tag matching:
    lowercase, forward slashes, no surrounding whitespace.
    Windows and Linux paths then share one rule vocabulary.
    """
    if not name:
        return ""
    return name.strip().replace("\\", "/").lower()


def validate_file(path: str) -> bool:
    """Validate that a file exists and is readable."""
    if not path:
        return False

    normalized = normalize_path(path)
    return os.path.isfile(normalized) and os.access(normalized, os.R_OK)


def missing_files(paths: Iterable[str]) -> List[str]:
    """Return the subset of paths that do not point to readable files."""
    return [p for p in paths if not validate_file(p)]
