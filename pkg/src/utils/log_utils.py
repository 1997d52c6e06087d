"""
Logging helpers.

Every module asks for its logger through get_logger(__name__); the first call
installs a single stream handler with the bracketed level prefix used across
the project ("[INFO] provhunt.hunter: ...").
"""

import logging
import os

_ROOT = "provhunt"
_configured = False


def configure_logging(level: str | int | None = None) -> None:
    """Install the project handler once; later calls only change the level."""
    global _configured

    root = logging.getLogger(_ROOT)
    level = level or os.environ.get("PROVHUNT_LOG_LEVEL", "INFO")
    root.setLevel(level if isinstance(level, int) else str(level).upper())

    if _configured:
        return

    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
    root.addHandler(handler)
    root.propagate = False
    _configured = True


def get_logger(module_name: str) -> logging.Logger:
    """Return a child of the project logger named after the module."""
    configure_logging()
    short = module_name.rsplit(".", 1)[-1]
    return logging.getLogger(f"{_ROOT}.{short}")
