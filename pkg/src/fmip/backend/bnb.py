"""Best-first branch and bound on top of :func:`lp_relax`."""

from __future__ import annotations

import heapq
import itertools
import math
import time

import numpy as np

from fmip.backend.result import ERROR, INFEASIBLE, OPTIMAL, TIMEOUT, SolveResult
from fmip.backend.simplex import lp_relax
from fmip.milp import MilpInstance

INT_TOL = 1e-6


def _complete(inst: MilpInstance, x: np.ndarray, lower, upper):
    """Round the integer block of an integral relaxation point and re-solve
    the continuous part with the integers pinned, so the returned point is
    exactly integral."""
    q = inst.num_int
    d = np.round(x[:q])
    if inst.num_cont == 0:
        point = d.astype(float)
        viol = inst.A @ point - inst.rhs
        if len(viol) and viol.max() > 1e-9:
            return None
        return point
    lo = np.array(lower, dtype=float)
    hi = np.array(upper, dtype=float)
    lo[:q] = d
    hi[:q] = d
    res = lp_relax(inst, lo, hi)
    if res.status != OPTIMAL:
        return None
    point = res.assignment
    point[:q] = d
    return point


def branch_and_bound(inst: MilpInstance, time_limit_s: float = math.inf, gap_tol: float = 1e-6,
                     trace: list | None = None) -> SolveResult:
    """Exact MILP solve.

    Nodes are explored in order of their relaxation bound; the branching
    variable is the most fractional integer variable (lowest index on ties).
    If ``trace`` is given, the incumbent objective after every processed node
    is appended to it.
    """
    start = time.perf_counter()
    deadline = start + time_limit_s
    q = inst.num_int
    root = lp_relax(inst)
    if root.status == INFEASIBLE:
        return SolveResult(INFEASIBLE, wall_time_s=time.perf_counter() - start, nodes=1)
    if root.status == ERROR:
        root.wall_time_s = time.perf_counter() - start
        root.nodes = 1
        return root
    if q == 0:
        root.wall_time_s = time.perf_counter() - start
        root.nodes = 1
        return root

    best_x, best_obj = None, math.inf
    counter = itertools.count()
    heap = [(root.objective, next(counter), np.array(inst.lower), np.array(inst.upper), root)]
    nodes = 0
    timed_out = False
    while heap:
        if time.perf_counter() > deadline:
            timed_out = True
            break
        bound, _, lo, hi, relax = heapq.heappop(heap)
        if relax is None:
            relax = lp_relax(inst, lo, hi)
            nodes += 1
            if relax.status == ERROR:
                return SolveResult(ERROR, wall_time_s=time.perf_counter() - start, nodes=nodes,
                                   message=relax.message)
            if relax.status == INFEASIBLE:
                if trace is not None:
                    trace.append(best_obj)
                continue
            bound = relax.objective
        else:
            nodes += 1
        if bound >= best_obj - gap_tol:
            if trace is not None:
                trace.append(best_obj)
            continue
        x = relax.assignment
        frac = np.abs(x[:q] - np.round(x[:q]))
        if trace is not None:
            trace.append(best_obj)
        if frac.max() <= INT_TOL:
            point = _complete(inst, x, lo, hi)
            if point is not None:
                obj = float(inst.obj @ point)
                if obj < best_obj:
                    best_x, best_obj = point, obj
                    if trace is not None:
                        trace[-1] = best_obj
                continue
            # numerically integral but not completable: split on a free
            # integer variable into <= k-1, = k, >= k+1
            free = np.flatnonzero(lo[:q] < hi[:q])
            if len(free) == 0:
                continue
            j = int(free[0])
            k = float(np.round(x[j]))
            children = []
            for a, b in ((lo[j], k - 1), (k, k), (k + 1, hi[j])):
                nlo, nhi = lo.copy(), hi.copy()
                nlo[j], nhi[j] = max(a, lo[j]), min(b, hi[j])
                children.append((nlo, nhi))
        else:
            j = int(np.argmax(frac))
            v = x[j]
            down_hi = hi.copy()
            down_hi[j] = math.floor(v)
            up_lo = lo.copy()
            up_lo[j] = math.ceil(v)
            children = [(lo, down_hi), (up_lo, hi)]
        for nlo, nhi in children:
            if nlo[j] <= nhi[j]:
                heapq.heappush(heap, (bound, next(counter), nlo, nhi, None))

    elapsed = time.perf_counter() - start
    if timed_out:
        open_bound = min((item[0] for item in heap), default=best_obj)
        return SolveResult(TIMEOUT, assignment=best_x, objective=best_obj,
                           bound=min(open_bound, best_obj), wall_time_s=elapsed, nodes=nodes)
    if best_x is None:
        return SolveResult(INFEASIBLE, wall_time_s=elapsed, nodes=nodes)
    return SolveResult(OPTIMAL, assignment=best_x, objective=best_obj, bound=best_obj,
                       wall_time_s=elapsed, nodes=nodes)

