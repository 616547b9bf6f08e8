"""Exhaustive enumeration oracle.

Every integer assignment inside the variable bounds is enumerated.  The
continuous residual LP is solved with SciPy's HiGHS rather than the built-in
simplex, so the oracle shares no solving code with branch and bound.  Two
exact interval tests skip residual LPs that cannot matter: a row whose
minimum possible activity already exceeds its right-hand side, and an
assignment whose objective lower bound is no better than the incumbent.
"""

from __future__ import annotations

import itertools
import time

import numpy as np
from scipy.optimize import linprog

from fmip.backend.result import ERROR, INFEASIBLE, OPTIMAL, SolveResult
from fmip.milp import MilpInstance

MAX_ENUM = 2 ** 20
CHUNK = 1 << 15
TOL = 1e-9


def _ranges(inst: MilpInstance):
    q = inst.num_int
    lo = np.ceil(inst.lower[:q] - 1e-9).astype(np.int64)
    hi = np.floor(inst.upper[:q] + 1e-9).astype(np.int64)
    return lo, hi


def enumeration_size(inst: MilpInstance) -> int:
    lo, hi = _ranges(inst)
    size = 1
    for a, b in zip(lo, hi):
        size *= max(0, int(b - a + 1))
    return size


def _assignments(lo, hi):
    """Yield (chunk, q) integer arrays covering the box lexicographically."""
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    it = itertools.product(*axes)
    while True:
        block = list(itertools.islice(it, CHUNK))
        if not block:
            return
        yield np.array(block, dtype=np.float64).reshape(len(block), len(lo))


def brute_force(inst: MilpInstance) -> SolveResult:
    start = time.perf_counter()
    q = inst.num_int
    size = enumeration_size(inst)
    if size > MAX_ENUM:
        return SolveResult(ERROR, message=f"enumeration size {size} exceeds {MAX_ENUM}")
    lo, hi = _ranges(inst)
    if size == 0:
        return SolveResult(INFEASIBLE, wall_time_s=time.perf_counter() - start)
    A = inst.dense_A
    A_int, A_cont = A[:, :q], A[:, q:]
    w_int, w_cont = inst.obj[:q], inst.obj[q:]
    lb_c, ub_c = inst.lower[q:], inst.upper[q:]
    with np.errstate(invalid="ignore"):
        # minimum continuous contribution per row / to the objective
        row_min = np.where(A_cont > 0, A_cont * lb_c, A_cont * ub_c)
        row_min = np.where(A_cont == 0, 0.0, row_min).sum(axis=1)
        obj_min = np.where(w_cont > 0, w_cont * lb_c, w_cont * ub_c)
        obj_min = float(np.where(w_cont == 0, 0.0, obj_min).sum())
    if np.any(lb_c > ub_c):
        return SolveResult(INFEASIBLE, wall_time_s=time.perf_counter() - start)

    best_x, best_obj, lps = None, np.inf, 0
    for D in _assignments(lo, hi):
        act = D @ A_int.T + row_min
        maybe = np.all(act <= inst.rhs + TOL, axis=1) if inst.num_cons else np.ones(len(D), bool)
        if not np.any(maybe):
            continue
        D = D[maybe]
        base = D @ w_int
        if inst.num_cont == 0:
            k = int(np.argmin(base))
            if base[k] < best_obj:
                best_x, best_obj = D[k].copy(), float(base[k])
            continue
        lower_bound = base + obj_min
        for k in np.argsort(lower_bound, kind="stable"):
            if lower_bound[k] >= best_obj - TOL:
                break
            res = linprog(w_cont, A_ub=A_cont if inst.num_cons else None,
                          b_ub=(inst.rhs - A_int @ D[k]) if inst.num_cons else None,
                          bounds=list(zip(np.where(np.isfinite(lb_c), lb_c, None),
                                          np.where(np.isfinite(ub_c), ub_c, None))),
                          method="highs")
            lps += 1
            if res.status == 2:
                continue
            if res.status == 3:
                return SolveResult(ERROR, message="continuous residual unbounded",
                                   wall_time_s=time.perf_counter() - start)
            if res.status != 0:
                return SolveResult(ERROR, message=f"residual LP failed: {res.message}",
                                   wall_time_s=time.perf_counter() - start)
            obj = float(base[k] + w_cont @ res.x)
            if obj < best_obj:
                best_x = np.concatenate([D[k], np.clip(res.x, lb_c, ub_c)])
                best_obj = float(inst.obj @ best_x)
    elapsed = time.perf_counter() - start
    if best_x is None:
        return SolveResult(INFEASIBLE, wall_time_s=elapsed, nodes=lps)
    return SolveResult(OPTIMAL, assignment=best_x, objective=best_obj, bound=best_obj,
                       wall_time_s=elapsed, nodes=lps)
