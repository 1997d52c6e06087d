"""
Validated command-line inputs.

RunConfig collects what a command was given and checks it once, before any
work starts: every referenced input file must exist and c_thr, when given,
must be at least 1.
"""

import math
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, ValidationError, field_validator

from src.config import DEFAULT_REORDER_WINDOW_US, DEFAULT_STORE_PATH, MICROS, EngineSettings
from src.core.errors import ConfigError
from src.core.est import load_policy_overrides
from src.core.tagging import TagRuleSet
from src.utils.path_utils import missing_files


def _must_exist(paths: list[Path]) -> list[Path]:
    missing = missing_files(str(p) for p in paths)
    if missing:
        raise ValueError(f"file not found: {', '.join(missing)}")
    return paths


class RunConfig(BaseModel):
    queries: list[Path] = Field(default_factory=list)
    events: list[Path] = Field(default_factory=list)
    rules: Optional[Path] = None
    est_override: Optional[Path] = None
    # seconds; None keeps every branch in memory
    t_forget: Optional[float] = Field(default=None, gt=0)
    c_thr: Optional[int] = Field(default=None, ge=1)
    reorder_window: float = Field(default=DEFAULT_REORDER_WINDOW_US / MICROS, ge=0)
    alert_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    store: Optional[Path] = None
    out: Optional[Path] = None
    seed: int = 0

    @field_validator("queries", "events")
    @classmethod
    def _inputs_exist(cls, value: list[Path]) -> list[Path]:
        return _must_exist(value)

    @field_validator("rules", "est_override")
    @classmethod
    def _optional_exists(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None:
            _must_exist([value])
        return value

    @classmethod
    def build(cls, **values) -> "RunConfig":
        """Validate CLI values; problems surface as a ConfigError."""
        try:
            return cls(**values)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or 'input'}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"Invalid arguments: {problems}") from None

    def tag_rules(self) -> Optional[TagRuleSet]:
        return TagRuleSet.from_file(self.rules) if self.rules else None

    def settings(self) -> EngineSettings:
        disabled = load_policy_overrides(self.est_override) if self.est_override else frozenset()
        return EngineSettings(
            reorder_window_us=int(self.reorder_window * MICROS),
            t_forget_us=(
                int(self.t_forget * MICROS) if self.t_forget is not None and math.isfinite(self.t_forget) else None
            ),
            budget=self.c_thr,
            disabled_policies=disabled,
            alert_fraction=self.alert_fraction,
        )

    def store_path(self) -> Path:
        return self.store or Path(DEFAULT_STORE_PATH)
