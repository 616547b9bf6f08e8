"""Dense two-phase tableau simplex for the LP relaxation.

The relaxation ``min w.x, A x <= b, lb <= x <= ub`` is shifted to
``y = x - lb in [0, ub - lb]`` and every upper bound becomes an explicit row,
giving the standard form ``G y + s = h, y, s >= 0``.  Rows with negative
``h`` are negated and receive an artificial column for phase one.
Infinite bounds are boxed at +-BOX; a solution touching the box is reported
as unbounded.
"""

from __future__ import annotations

import time

import numpy as np

from fmip.backend.result import ERROR, INFEASIBLE, OPTIMAL, SolveResult
from fmip.milp import MilpInstance

BOX = 1e7
PIVOT_TOL = 1e-9
OPT_TOL = 1e-9
PHASE1_TOL = 1e-7
ROW_TOL = 1e-6


class _Unbounded(Exception):
    pass


class _IterationLimit(Exception):
    pass


def _run(T: np.ndarray, basis: np.ndarray, cost: np.ndarray, bland_after: int, max_iter: int,
         allowed: int) -> None:
    """Minimize ``cost . z`` over the tableau ``T = [M | r]`` in place.

    ``basis[i]`` is the column basic in row i; only the first ``allowed``
    columns may enter.
    """
    R = T.shape[0]
    for it in range(max_iter):
        cb = cost[basis]
        reduced = cost[:allowed] - cb @ T[:, :allowed]
        candidates = np.flatnonzero(reduced < -OPT_TOL)
        if len(candidates) == 0:
            return
        if it < bland_after:
            j = int(candidates[np.argmin(reduced[candidates])])
        else:
            j = int(candidates[0])
        col = T[:, j]
        pos = col > PIVOT_TOL
        if not np.any(pos):
            raise _Unbounded()
        ratios = np.full(R, np.inf)
        ratios[pos] = T[pos, -1] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        i = int(ties[np.argmin(basis[ties])])
        _pivot(T, i, j)
        basis[i] = j
    raise _IterationLimit()


def _pivot(T: np.ndarray, i: int, j: int) -> None:
    T[i] /= T[i, j]
    factors = T[:, j].copy()
    factors[i] = 0.0
    T -= np.outer(factors, T[i])


def solve_lp(c: np.ndarray, G: np.ndarray, h: np.ndarray):
    """Minimize ``c.y`` s.t. ``G y <= h``, ``y >= 0``.

    Returns ``(status, y)`` with status in {"optimal", "infeasible",
    "unbounded", "iteration_limit"}.
    """
    R, N = G.shape
    neg = h < 0
    n_art = int(neg.sum())
    width = N + R + n_art
    T = np.zeros((R, width + 1))
    T[:, :N] = G
    T[np.arange(R), N + np.arange(R)] = 1.0
    T[:, -1] = h
    T[neg] *= -1.0
    basis = N + np.arange(R)
    art_rows = np.flatnonzero(neg)
    T[art_rows, N + R + np.arange(n_art)] = 1.0
    basis[art_rows] = N + R + np.arange(n_art)
    bland_after = 10 * (N + R)
    max_iter = 50 * (width + R) + 1000
    try:
        if n_art:
            cost1 = np.zeros(width)
            cost1[N + R:] = 1.0
            _run(T, basis, cost1, bland_after, max_iter, width)
            if cost1[basis] @ T[:, -1] > PHASE1_TOL * max(1.0, np.abs(h).max()):
                return "infeasible", None
            keep = np.ones(R, dtype=bool)
            for i in np.flatnonzero(basis >= N + R):
                row = T[i, :N + R]
                nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if len(nz):
                    _pivot(T, i, int(nz[0]))
                    basis[i] = int(nz[0])
                else:
                    keep[i] = False
            T = np.ascontiguousarray(np.delete(T[keep], np.s_[N + R:width], axis=1))
            basis = basis[keep]
        cost2 = np.zeros(N + R)
        cost2[:N] = c
        _run(T, basis, cost2, bland_after, max_iter, N + R)
    except _Unbounded:
        return "unbounded", None
    except _IterationLimit:
        return "iteration_limit", None
    z = np.zeros(T.shape[1] - 1)
    z[basis] = T[:, -1]
    return "optimal", np.maximum(z[:N], 0.0)


def lp_relax(inst: MilpInstance, lower=None, upper=None) -> SolveResult:
    """Solve the continuous relaxation, optionally with overriding bounds."""
    start = time.perf_counter()
    lb = np.array(inst.lower if lower is None else lower, dtype=float)
    ub = np.array(inst.upper if upper is None else upper, dtype=float)
    if np.any(lb > ub):
        return SolveResult(INFEASIBLE, wall_time_s=time.perf_counter() - start)
    boxed = ~np.isfinite(lb) | ~np.isfinite(ub)
    lb_b = np.where(np.isfinite(lb), lb, -BOX)
    ub_b = np.where(np.isfinite(ub), ub, BOX)
    A = inst.dense_A
    free = np.flatnonzero(ub_b > lb_b)
    fixed_part = A @ lb_b
    h_rows = inst.rhs - fixed_part
    span = (ub_b - lb_b)[free]
    G = np.vstack([A[:, free], np.eye(len(free))])
    h = np.concatenate([h_rows, span])
    status, y = solve_lp(inst.obj[free], G, h)
    elapsed = time.perf_counter() - start
    if status == "infeasible":
        return SolveResult(INFEASIBLE, wall_time_s=elapsed)
    if status != "optimal":
        return SolveResult(ERROR, wall_time_s=elapsed, message=f"relaxation {status}")
    x = lb_b.copy()
    x[free] += y
    x = np.clip(x, lb_b, ub_b)
    if np.any(boxed & (np.abs(x) >= BOX * (1 - 1e-9))):
        return SolveResult(ERROR, wall_time_s=elapsed, message="relaxation unbounded")
    # boxing inflates the phase-one tolerance, so re-check the original rows
    viol = A @ x - inst.rhs
    if len(viol) and viol.max() > ROW_TOL * (1.0 + np.abs(inst.rhs).max()):
        return SolveResult(INFEASIBLE, wall_time_s=elapsed, message="phase one residual")
    obj = float(inst.obj @ x)
    return SolveResult(OPTIMAL, assignment=x, objective=obj, bound=obj, wall_time_s=elapsed)
