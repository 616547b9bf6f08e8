from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
TIMEOUT = "timeout"
ERROR = "error"

STATUSES = (OPTIMAL, FEASIBLE, INFEASIBLE, TIMEOUT, ERROR)


@dataclass
class SolveResult:
    """Outcome of any solve call.

    ``assignment`` is None when no feasible point is known.  ``objective`` is
    +inf in that case and ``bound`` holds the best proven lower bound
    (-inf when nothing was proven).
    """

    status: str
    assignment: Optional[np.ndarray] = None
    objective: float = float("inf")
    bound: float = float("-inf")
    wall_time_s: float = 0.0
    nodes: int = 0
    message: str = ""

    @property
    def has_solution(self) -> bool:
        return self.assignment is not None

    def same_outcome(self, other: "SolveResult") -> bool:
        """Equality ignoring wall time and diagnostics."""
        if self.status != other.status or self.objective != other.objective:
            return False
        if (self.assignment is None) != (other.assignment is None):
            return False
        return self.assignment is None or np.array_equal(self.assignment, other.assignment)
