"""Primal heuristics driven by per-variable marginals.

Each strategy restricts the instance (tightened bounds or appended rows,
never a changed objective), hands the restriction to a backend and
re-evaluates whatever comes back on the original instance.

Marginals are ``q x (K+1)`` row-stochastic matrices; for binary blocks the
probability of value 1 is column 1.
"""

from __future__ import annotations

import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from fmip.backend.result import ERROR, FEASIBLE, INFEASIBLE, OPTIMAL, TIMEOUT, SolveResult
from fmip.milp import FEAS_TOL, MilpInstance, evaluate

log = logging.getLogger(__name__)

ROUND_EPS = 1e-9  # slack for floor/ceil of computed right-hand sides


# -- configuration -----------------------------------------------------------------


@dataclass
class NDConfig:
    num_candidates: int = 50
    fix_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ValueError("nd: num_candidates must be >= 1")
        if not 0 <= self.fix_fraction <= 1:
            raise ValueError("nd: fix_fraction must lie in [0, 1]")


@dataclass
class PSConfig:
    k0: float = 0.3
    k1: float = 0.06
    delta: float = 0.3

    def __post_init__(self):
        if not (0 <= self.k0 < 1 and 0 <= self.k1 < 1):
            raise ValueError("ps: k0 and k1 must lie in [0, 1)")
        if self.k0 >= 1 - self.k1:
            raise ValueError("ps: k0 < 1 - k1 is required so T0 and T1 are disjoint")
        if self.delta < 0:
            raise ValueError("ps: delta must be >= 0")


@dataclass
class PMVBConfig:
    conf: float = 0.7
    threshold: float = 0.9

    def __post_init__(self):
        if not 0 < self.conf < 1:
            raise ValueError("pmvb: conf must lie in (0, 1)")
        if not 0.5 < self.threshold <= 1:
            raise ValueError("pmvb: threshold must lie in (0.5, 1] so U and L are disjoint")


@dataclass
class ApolloConfig:
    k0: float = 0.3
    k1: float = 0.06
    delta: float = 0.3
    iterations: int = 2

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("apollo: iterations must be >= 1")
        PSConfig(self.k0, self.k1, self.delta)  # validates the trust-region parameters

    @property
    def ps(self) -> PSConfig:
        return PSConfig(self.k0, self.k1, self.delta)


@dataclass
class StrategyConfig:
    nd: NDConfig = field(default_factory=NDConfig)
    ps: PSConfig = field(default_factory=PSConfig)
    pmvb: PMVBConfig = field(default_factory=PMVBConfig)
    apollo: ApolloConfig = field(default_factory=ApolloConfig)


def parse_bracket(text: str) -> list[float]:
    """``"[50, 0.1]"`` -> ``[50.0, 0.1]``."""
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ValueError(f"expected a bracketed list, got {text!r}")
    parts = [p for p in re.split(r"[,\s]+", body[1:-1].strip()) if p]
    return [float(p) for p in parts]


def parse_params(strategy: str, text: str):
    """Build a strategy config from its bracketed parameter list.

    nd ``[K_nd, alpha]``, ps ``[k0, k1, delta]``, pmvb ``[conf, threshold]``,
    apollo ``[k0, k1, delta, iterations]``.
    """
    v = parse_bracket(text)
    arity = {"nd": 2, "ps": 3, "pmvb": 2, "apollo": 4}
    if strategy not in arity:
        raise ValueError(f"unknown strategy {strategy!r}")
    if len(v) != arity[strategy]:
        raise ValueError(f"{strategy} expects {arity[strategy]} values, got {len(v)}")
    if strategy == "nd":
        if v[0] != int(v[0]):
            raise ValueError("nd: candidate count must be whole")
        return NDConfig(int(v[0]), v[1])
    if strategy == "ps":
        return PSConfig(*v)
    if strategy == "pmvb":
        return PMVBConfig(*v)
    if v[3] != int(v[3]):
        raise ValueError("apollo: iteration count must be whole")
    return ApolloConfig(v[0], v[1], v[2], int(v[3]))


# -- helpers ------------------------------------------------------------------------


def check_marginals(marg, inst: MilpInstance) -> np.ndarray:
    marg = np.asarray(marg, dtype=float)
    q, K = inst.num_int, inst.int_bound
    if marg.shape != (q, K + 1):
        raise ValueError(f"marginals have shape {marg.shape}, expected {(q, K + 1)}")
    if marg.size and (marg.min() < 0 or marg.max() > 1):
        raise ValueError("marginal entries must lie in [0, 1]")
    if q and np.max(np.abs(marg.sum(axis=1) - 1)) > 1e-9:
        raise ValueError("marginal rows must sum to 1")
    return marg


def _require_binary(inst: MilpInstance, who: str):
    if inst.int_bound != 1:
        raise ValueError(f"{who} needs a binary integer block (K = 1)")


def _on_original(inst: MilpInstance, res: SolveResult, restricted: bool) -> SolveResult:
    """Re-evaluate a sub-MIP result on the original instance."""
    if res.assignment is None:
        return res
    rep = evaluate(inst, res.assignment, FEAS_TOL)
    if not rep.feasible:
        return SolveResult(ERROR, wall_time_s=res.wall_time_s, nodes=res.nodes,
                           message=f"sub-MIP solution violates the original (max {rep.max_violation:.3g})")
    status = res.status
    if restricted and status == OPTIMAL:
        status = FEASIBLE
    bound = res.bound if not restricted else float("-inf")
    return SolveResult(status, np.asarray(res.assignment, dtype=float), rep.objective, bound,
                       res.wall_time_s, res.nodes, res.message)


# -- neural diving --------------------------------------------------------------------


@dataclass
class SubMip:
    fixed: np.ndarray
    values: np.ndarray
    instance: MilpInstance


def fix_count(q: int, alpha: float) -> int:
    return min(q, math.ceil(alpha * q - ROUND_EPS))


def diving_subproblems(marg, inst: MilpInstance, cfg: NDConfig) -> list[SubMip]:
    """The ``K_nd`` restricted instances, most confident variables fixed."""
    marg = check_marginals(marg, inst)
    q = inst.num_int
    k = fix_count(q, cfg.fix_fraction)
    order = np.argsort(-marg.max(axis=1), kind="stable") if q else np.zeros(0, dtype=int)
    chosen = np.sort(order[:k])
    cats = np.arange(inst.int_bound + 1)
    subs = []
    for s in range(cfg.num_candidates):
        rng = np.random.default_rng([cfg.seed, s])
        vals = np.empty(k)
        for n, i in enumerate(chosen):
            p = marg[i] * ((cats >= inst.lower[i]) & (cats <= inst.upper[i]))
            if p.sum() <= 0:
                vals[n] = inst.lower[i]
            else:
                vals[n] = cats[min(np.searchsorted(np.cumsum(p / p.sum()), rng.random(), "right"),
                                   len(cats) - 1)]
        subs.append(SubMip(chosen, vals, inst.fix(chosen, vals) if k else inst))
    return subs


def neural_diving(marg, inst: MilpInstance, cfg: NDConfig, backend,
                  time_limit: float = math.inf, workers: int = 1) -> SolveResult:
    start = time.perf_counter()
    subs = diving_subproblems(marg, inst, cfg)
    unique: dict[bytes, SubMip] = {}
    for s in subs:
        unique.setdefault(s.values.tobytes(), s)
    per = time_limit / len(unique)
    jobs = list(unique.values())

    def run(sub):
        return _on_original(inst, backend.solve(sub.instance, per), len(sub.fixed) > 0)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(s) for s in jobs]
    elapsed = time.perf_counter() - start
    nodes = sum(r.nodes for r in results)
    found = [r for r in results if r.assignment is not None]
    if not found:
        statuses = {r.status for r in results}
        status = TIMEOUT if TIMEOUT in statuses else ERROR if statuses == {ERROR} else INFEASIBLE
        return SolveResult(status, wall_time_s=elapsed, nodes=nodes,
                           message=f"no incumbent in {len(subs)} sub-MIPs ({sorted(statuses)})")
    best = min(found, key=lambda r: r.objective)
    return SolveResult(best.status, best.assignment, best.objective, best.bound, elapsed, nodes,
                       f"{len(subs)} sub-MIPs, {len(jobs)} distinct")


# -- predict and search ------------------------------------------------------------------


@dataclass
class TrustRegion:
    T0: np.ndarray
    T1: np.ndarray
    budget: int  # floor(delta * (|T0| + |T1|))
    row: dict
    rhs: float


def trust_region(marg, inst: MilpInstance, cfg: PSConfig, active=None) -> TrustRegion:
    """``sum_T0 x + sum_T1 (1 - x) <= floor(delta (|T0| + |T1|))`` as a ``<=`` row."""
    marg = check_marginals(marg, inst)
    p1 = marg[:, 1] if len(marg) else np.zeros(0)
    mask = np.ones(len(p1), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    T0 = np.flatnonzero(mask & (p1 <= cfg.k0))
    T1 = np.flatnonzero(mask & (p1 >= 1 - cfg.k1))
    budget = math.floor(cfg.delta * (len(T0) + len(T1)) + ROUND_EPS)
    row = {int(i): 1.0 for i in T0}
    row.update({int(i): -1.0 for i in T1})
    return TrustRegion(T0, T1, budget, row, float(budget - len(T1)))


def predict_and_search(marg, inst: MilpInstance, cfg: PSConfig, backend,
                       time_limit: float = math.inf, active=None) -> SolveResult:
    _require_binary(inst, "predict_and_search")
    tr = trust_region(marg, inst, cfg, active)
    if not tr.row:
        log.info("%s: empty trust region, solving the original instance", inst.name)
        return _on_original(inst, backend.solve(inst, time_limit), False)
    vacuous = tr.budget >= len(tr.T0) + len(tr.T1)
    sub = inst.with_rows([tr.row], [tr.rhs])
    return _on_original(inst, backend.solve(sub, time_limit), not vacuous)


# -- probability-margin branching -------------------------------------------------------------


@dataclass
class MarginRows:
    U: np.ndarray
    L: np.ndarray
    gamma_U: float
    gamma_L: float
    lower_rhs: Optional[int]  # sum_U x >= lower_rhs, None when omitted
    upper_rhs: Optional[int]  # sum_L x <= upper_rhs, None when omitted


def confidence_slack(size: int, conf: float) -> float:
    return math.sqrt(size * math.log(2 / conf) / 2)


def pmvb_rows(marg, inst: MilpInstance, cfg: PMVBConfig) -> MarginRows:
    marg = check_marginals(marg, inst)
    p1 = marg[:, 1] if len(marg) else np.zeros(0)
    U = np.flatnonzero(p1 >= cfg.threshold)
    L = np.flatnonzero(p1 <= 1 - cfg.threshold)
    gU, gL = confidence_slack(len(U), cfg.conf), confidence_slack(len(L), cfg.conf)
    lo = math.ceil((1 - cfg.conf) * p1[U].sum() - gU - ROUND_EPS) if len(U) else None
    if lo is not None and (lo <= 0 or lo > len(U)):
        lo = None  # vacuous, or unsatisfiable by construction
    hi = math.floor(cfg.conf * p1[L].sum() + gL + ROUND_EPS) if len(L) else None
    if hi is not None and (hi >= len(L) or hi < 0):
        hi = None
    return MarginRows(U, L, gU, gL, lo, hi)


def pmvb(marg, inst: MilpInstance, cfg: PMVBConfig, backend,
         time_limit: float = math.inf) -> SolveResult:
    _require_binary(inst, "pmvb")
    mr = pmvb_rows(marg, inst, cfg)
    rows, rhs = [], []
    if mr.lower_rhs is not None:
        rows.append({int(i): -1.0 for i in mr.U})
        rhs.append(-float(mr.lower_rhs))
    if mr.upper_rhs is not None:
        rows.append({int(i): 1.0 for i in mr.L})
        rhs.append(float(mr.upper_rhs))
    if not rows:
        log.info("%s: both margin rows vacuous, solving the original instance", inst.name)
        return _on_original(inst, backend.solve(inst, time_limit), False)
    return _on_original(inst, backend.solve(inst.with_rows(rows, rhs), time_limit), True)


# -- alternating prediction and correction ----------------------------------------------------


def apollo(marg_fn: Callable[[MilpInstance], np.ndarray], inst: MilpInstance, cfg: ApolloConfig,
           backend, time_limit: float = math.inf) -> SolveResult:
    """Repeat: predict, trust-region search, fix variables where both agree.

    ``marg_fn`` re-predicts marginals for the current (bound-tightened)
    instance.  Returns the last iteration's incumbent; if a reduction leaves
    no incumbent the last fixed batch is released and solved once more.
    """
    _require_binary(inst, "apollo")
    start = time.perf_counter()
    per = time_limit / cfg.iterations
    q = inst.num_int
    current = inst
    fixed = np.zeros(q, dtype=bool)
    last_batch = np.zeros(0, dtype=np.int64)
    best: Optional[SolveResult] = None
    result: Optional[SolveResult] = None
    for it in range(cfg.iterations):
        marg = check_marginals(marg_fn(current), current)
        result = predict_and_search(marg, current, cfg.ps, backend, per, active=~fixed)
        result = _on_original(inst, result, True) if it else result
        if result.assignment is None:
            if it == 0:
                return result
            log.info("%s: reduction at iteration %d has no incumbent; releasing %d fixings",
                     inst.name, it + 1, len(last_batch))
            released = current.with_bounds(
                np.where(np.isin(np.arange(inst.num_vars), last_batch), inst.lower, current.lower),
                np.where(np.isin(np.arange(inst.num_vars), last_batch), inst.upper, current.upper))
            retry = _on_original(inst, backend.solve(released, per), True)
            cands = [r for r in (retry, best) if r is not None and r.assignment is not None]
            if not cands:
                return retry
            out = min(cands, key=lambda r: r.objective)
            out.wall_time_s = time.perf_counter() - start
            return out
        if best is None or result.objective <= best.objective:
            best = result
        if it == cfg.iterations - 1:
            break
        ref = np.rint(result.assignment[:q])
        agree = (~fixed) & (marg.argmax(axis=1) == ref)
        last_batch = np.flatnonzero(agree)
        fixed |= agree
        current = current.fix(last_batch, ref[last_batch])
    if cfg.iterations > 1:
        result.wall_time_s = time.perf_counter() - start
    return result
