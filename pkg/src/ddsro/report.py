"""Solve reports shared by the decomposition solver and the comparators."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np


@dataclass
class SolveReport:
    method: str
    objective: float  # in the user's sense (max problems report the max value)
    x: List[float]
    status: str = "optimal"
    converged: bool = True
    iterations: int = 0
    wall_time: float = 0.0
    lower_bounds: List[float] = field(default_factory=list)  # canonical min form
    upper_bounds: List[float] = field(default_factory=list)
    worst_u: Dict[str, List[float]] = field(default_factory=dict)
    second_stage: Dict[str, List[float]] = field(default_factory=dict)  # recourse y at worst_u
    flags: Dict[str, object] = field(default_factory=dict)
    sense: str = "min"
    gap: Optional[float] = None

    @property
    def gaps(self) -> List[float]:
        return [relative_gap(lb, ub) for lb, ub in zip(self.lower_bounds, self.upper_bounds)]

    def to_dict(self):
        d = asdict(self)
        d["x"] = [float(v) for v in self.x]
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), default=_jsonable, **kw)

    @classmethod
    def from_dict(cls, d) -> "SolveReport":
        return cls(**d)


def relative_gap(lb: float, ub: float) -> float:
    if not np.isfinite(ub) or not np.isfinite(lb):
        return float("inf")
    return (ub - lb) / max(abs(ub), 1e-12)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
