"""Pluggable MILP solving.

A backend is any object with ``solve(inst, time_limit_s) -> SolveResult``.
Every call must own all of its state so backends can be shared between
threads.
"""

from __future__ import annotations

import math

from fmip.backend.bnb import branch_and_bound
from fmip.backend.brute import MAX_ENUM, brute_force, enumeration_size
from fmip.backend.external import ENV_VAR, external_solve
from fmip.backend.lpformat import LPFormatError, parse_solution, read_lp, write_lp, write_solution
from fmip.backend.result import (
    ERROR,
    FEASIBLE,
    INFEASIBLE,
    OPTIMAL,
    TIMEOUT,
    SolveResult,
)
from fmip.backend.simplex import lp_relax


class BranchAndBoundBackend:
    name = "bnb"

    def __init__(self, gap_tol: float = 1e-6):
        self.gap_tol = gap_tol

    def solve(self, inst, time_limit_s: float = math.inf) -> SolveResult:
        return branch_and_bound(inst, time_limit_s, self.gap_tol)


class BruteForceBackend:
    name = "brute"

    def solve(self, inst, time_limit_s: float = math.inf) -> SolveResult:
        return brute_force(inst)


class ExternalBackend:
    name = "external"

    def __init__(self, cmd_template: str | None = None):
        self.cmd_template = cmd_template

    def solve(self, inst, time_limit_s: float = 60.0) -> SolveResult:
        if not math.isfinite(time_limit_s):
            time_limit_s = 3600.0
        return external_solve(inst, self.cmd_template, time_limit_s)


def make_backend(name: str, **kwargs):
    if name in ("bnb", "builtin"):
        return BranchAndBoundBackend(**kwargs)
    if name == "brute":
        return BruteForceBackend()
    if name == "external":
        return ExternalBackend(**kwargs)
    raise ValueError(f"unknown backend {name!r}")


__all__ = [
    "BranchAndBoundBackend", "BruteForceBackend", "ExternalBackend", "make_backend",
    "SolveResult", "OPTIMAL", "FEASIBLE", "INFEASIBLE", "TIMEOUT", "ERROR", "ENV_VAR",
    "MAX_ENUM", "lp_relax", "branch_and_bound", "brute_force", "enumeration_size", "external_solve",
    "read_lp", "write_lp", "parse_solution", "write_solution", "LPFormatError",
]
