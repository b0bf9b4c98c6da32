"""Result records for a synthesis run, JSON-serializable with stable layout."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any


@dataclass
class ConditionSolveRecord:
    condition: str
    degree: int
    status: str
    rows: int = 0
    block_dims: list[int] = field(default_factory=list)
    free_vars: int = 0
    objective: float | None = None
    primal_residual: float | None = None
    dual_residual: float | None = None
    gap: float | None = None
    min_eig: float | None = None
    certificate_relative: float | None = None
    iterations: int = 0
    solve_time: float = 0.0
    p_coefficients: dict[str, float] | None = None
    message: str = ""


@dataclass
class DegreeRecord:
    degree: int
    solves: list[ConditionSolveRecord] = field(default_factory=list)
    candidate: list[float] | None = None
    margin: float | None = None
    search_trace: dict[str, Any] = field(default_factory=dict)
    all_solved: bool = False


@dataclass
class SynthesisReport:
    config: dict[str, Any] = field(default_factory=dict)
    param_names: list[str] = field(default_factory=list)
    effective_param_box: list[list[str]] | None = None
    degrees: list[DegreeRecord] = field(default_factory=list)
    candidate: list[float] | None = None
    candidate_margin: float | None = None
    candidate_degree: int | None = None
    rationalization: list[dict[str, Any]] = field(default_factory=list)
    posterior: dict[str, Any] = field(default_factory=dict)
    verdict: str = "not_found"  # verified | candidate_only | refuted | not_found | error
    total_time: float = 0.0
    notes: list[str] = field(default_factory=list)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(_plain(asdict(self)), indent=indent, sort_keys=True)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, float):
        return x
    return x
