"""
Runtime defaults.

Values come from the environment (optionally a .env file) and are folded into
an EngineSettings model that the hunting engine and the CLI share.
"""

import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

load_dotenv(override=False)

MICROS = 1_000_000


def _env_seconds(name: str, default: float) -> Optional[int]:
    """Read a duration in seconds; 'inf' (or 'none') means unbounded."""
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return int(default * MICROS)
    if raw.strip().lower() in {"inf", "infinity", "none"}:
        return None
    return int(float(raw) * MICROS)


DEFAULT_T_FORGET_US = _env_seconds("PROVHUNT_T_FORGET", 6 * 3600)
DEFAULT_REORDER_WINDOW_US = _env_seconds("PROVHUNT_REORDER_WINDOW", 5) or 0
DEFAULT_STORE_PATH = os.environ.get("PROVHUNT_STORE", "branch_store.db")
DEFAULT_ORACLE_CAP = int(os.environ.get("PROVHUNT_ORACLE_CAP", "30"))
DEFAULT_ORACLE_MAX_EDGES = 6


class EngineSettings(BaseModel):
    """Knobs of one hunting engine instance."""

    reorder_window_us: int = Field(default=DEFAULT_REORDER_WINDOW_US, ge=0)
    # None keeps every branch in memory
    t_forget_us: Optional[int] = Field(default=None, gt=0)
    # None is the unbounded EST search; an int is the hop-limited baseline
    budget: Optional[int] = Field(default=None, ge=1)
    disabled_policies: frozenset[str] = frozenset()
    alert_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    merge_queries: bool = True
    prune_each_batch: bool = True

    @field_validator("disabled_policies", mode="before")
    @classmethod
    def _as_frozenset(cls, value):
        return frozenset(value or ())

    def hop_limited(self, c_thr: Optional[int]) -> "EngineSettings":
        """Copy of these settings with every EST search bounded by c_thr hops."""
        return self.model_copy(update={"budget": c_thr})
