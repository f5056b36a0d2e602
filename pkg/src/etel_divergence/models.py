"""Shared enums and the run manifest written next to every CLI output."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field, fields
from enum import Enum
from numbers import Integral, Real
from typing import Any

STATUSES = ("success", "failed")


def _checked_number(value: Any, field_name: str, kind: type) -> Any:
    # bool is an Integral
    if isinstance(value, bool) or not isinstance(value, kind):
        noun = "an integer" if kind is Integral else "a number"
        raise TypeError(f"{field_name} must be {noun}")
    result = int(value) if kind is Integral else float(value)
    if not result >= 0:
        raise ValueError(f"{field_name} must be >= 0, got {value!r}")
    return result


def _output_paths(values: Iterable[Any] | None) -> list[str]:
    if values is None:
        return []
    if isinstance(values, str):
        raise TypeError("outputs must be a list of path strings")
    paths = list(values)
    if any(not isinstance(item, str) for item in paths):
        raise TypeError("outputs must be a list of path strings")
    return paths


class Method(str, Enum):
    """Implied-probability estimator family."""

    EL = "EL"
    ET = "ET"
    ETEL = "ETEL"

    @classmethod
    def parse(cls, value: Any) -> Method:
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper()
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(m.value.lower() for m in cls)
            raise ValueError(f"Unknown estimator {value!r} (expected one of: {choices})") from None


class Family(str, Enum):
    """Test-statistic family."""

    T = "T"
    S = "S"
    G2 = "G2"
    T_H = "T_h"
    S_H = "S_h"

    @classmethod
    def parse(cls, value: Any) -> Family:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        choices = ", ".join(m.value.lower() for m in cls)
        raise ValueError(f"Unknown statistic family {value!r} (expected one of: {choices})")


@dataclass
class RunManifest:
    """Audit-trail manifest for a single CLI command."""

    command: str = ""
    tool: str = "etel-divergence"
    version: str = ""
    config: dict[str, Any] = field(default_factory=dict)
    master_seed: int | None = None
    input_path: str = ""
    sha256: str = ""
    outputs: list[str] = field(default_factory=list)
    created_at_utc: str = ""
    wall_clock_seconds: float = 0.0
    status: str = "success"
    error_code: int | None = None
    error_message: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.config, dict):
            raise TypeError("config must be a mapping")
        if self.master_seed is not None:
            self.master_seed = _checked_number(self.master_seed, "master_seed", Integral)
        self.outputs = _output_paths(self.outputs)
        self.wall_clock_seconds = _checked_number(
            self.wall_clock_seconds, "wall_clock_seconds", Real
        )
        if self.error_code is not None:
            self.error_code = _checked_number(self.error_code, "error_code", Integral)
        self._check_outcome()

    def _check_outcome(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}, got {self.status!r}")
        has_error = self.error_code is not None or bool(self.error_message)
        if self.status == "success":
            if has_error:
                raise ValueError("error_code/error_message must be empty for a successful run")
            return
        if self.error_code is None:
            raise ValueError("error_code is required for a failed run")
        if not self.error_message:
            raise ValueError("error_message is required for a failed run")

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["config"] = dict(self.config)
        out["outputs"] = list(self.outputs)
        return out
