"""Structured verification records shared by the verifiers and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np


def rational_str(q: Fraction | int) -> str:
    q = Fraction(q)
    return f"{q.numerator}/{q.denominator}"


def to_jsonable(value: Any) -> Any:
    """Rationals become "p/q" strings, arrays become lists, floats stay floats."""
    if isinstance(value, Fraction):
        return rational_str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


@dataclass
class Report:
    """Outcome of one check: values, exact prefactors, tolerance, witnesses."""

    operation: str
    passed: bool
    values: dict[str, Any] = field(default_factory=dict)
    prefactors: dict[str, Fraction] = field(default_factory=dict)
    tolerance: float | None = None
    witnesses: list[dict[str, Any]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict[str, Any]:
        return {
            "operation": self.operation,
            "passed": self.passed,
            "values": to_jsonable(self.values),
            "prefactors": to_jsonable(self.prefactors),
            "tolerance": self.tolerance,
            "witnesses": to_jsonable(self.witnesses),
        }
