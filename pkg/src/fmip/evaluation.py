"""Evaluation harness: sample pools, run strategies, score against best-known values."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from fmip.backend import MAX_ENUM, brute_force, enumeration_size
from fmip.backend.result import SolveResult
from fmip.downstream import StrategyConfig, apollo, neural_diving, pmvb, predict_and_search
from fmip.flow import make_schedule
from fmip.guidance import (
    CandidatePool,
    GuidanceConfig,
    ModelPredictor,
    normalized_instance,
    sample_solutions,
)
from fmip.graph import encode
from fmip.metrics import format_imp, metrics_cross_entropy, metrics_gap, metrics_imp
from fmip.milp import FEAS_TOL, MilpInstance, evaluate

log = logging.getLogger(__name__)

STRATEGIES = ("nd", "ps", "pmvb", "apollo")
MODES = ("guided", "unguided")


@dataclass
class EvalRecord:
    instance: str
    method: str
    obj: float  # nan when the method found nothing
    bks: float
    gap: float
    wall_time_s: float
    feasible: bool
    status: str = ""


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    cross_entropy: dict = field(default_factory=dict)  # mode -> mean CE
    mean_pool_f: dict = field(default_factory=dict)  # mode -> mean target_f over pools
    failures: list = field(default_factory=list)

    def methods(self) -> list[str]:
        seen = []
        for r in self.records:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def instances(self) -> list[str]:
        seen = []
        for r in self.records:
            if r.instance not in seen:
                seen.append(r.instance)
        return seen

    def mean_gap(self, method: str) -> float:
        gaps = [r.gap for r in self.records if r.method == method and math.isfinite(r.gap)]
        return float(np.mean(gaps)) if gaps else float("nan")

    @property
    def all_feasible(self) -> bool:
        return all(r.feasible for r in self.records if math.isfinite(r.obj))

    def improvements(self) -> dict:
        """strategy -> (unguided mean gap, guided mean gap, Imp percent or None)."""
        out = {}
        for s in STRATEGIES + ("sampler",):
            a, b = f"{s}/unguided", f"{s}/guided"
            if a in self.methods() and b in self.methods():
                ga, gb = self.mean_gap(a), self.mean_gap(b)
                imp = metrics_imp(ga, gb) if math.isfinite(ga) and math.isfinite(gb) else None
                out[s] = (ga, gb, imp)
        return out


def make_predictor(model, inst: MilpInstance):
    return ModelPredictor(model, encode(inst))


def sample_pool(model, inst: MilpInstance, guidance: GuidanceConfig, steps: int = 30,
                schedule: str = "cosine", n_candidates: int = 64, seed: int = 0) -> CandidatePool:
    g = encode(inst)
    return sample_solutions(inst, ModelPredictor(model, g), guidance, make_schedule(schedule, steps),
                            n_candidates, np.random.default_rng(seed),
                            guide_inst=normalized_instance(inst, g))


def best_known(inst: MilpInstance, backend, time_limit: float) -> SolveResult:
    """Exact enumeration when small enough, else the backend."""
    if enumeration_size(inst) <= MAX_ENUM:
        return brute_force(inst)
    return backend.solve(inst, time_limit)


def run_strategy(name: str, marg, inst: MilpInstance, strategies: StrategyConfig, backend,
                 time_limit: float, marg_fn=None) -> SolveResult:
    if name == "nd":
        return neural_diving(marg, inst, strategies.nd, backend, time_limit)
    if name == "ps":
        return predict_and_search(marg, inst, strategies.ps, backend, time_limit)
    if name == "pmvb":
        return pmvb(marg, inst, strategies.pmvb, backend, time_limit)
    if name == "apollo":
        if marg_fn is None:
            raise ValueError("apollo needs a marginal predictor")
        return apollo(marg_fn, inst, strategies.apollo, backend, time_limit)
    raise ValueError(f"unknown strategy {name!r}")


def evaluate_model(model, instances: Sequence, strategies: Sequence[str], backend,
                   guidance: GuidanceConfig, strategy_cfg: Optional[StrategyConfig] = None,
                   time_limit: float = 60.0, steps: int = 30, schedule: str = "cosine",
                   n_candidates: int = 64, seed: int = 0,
                   modes: Sequence[str] = MODES) -> EvalReport:
    """``instances`` holds MilpInstance or LabeledInstance items."""
    strategy_cfg = strategy_cfg or StrategyConfig()
    report = EvalReport()
    ce: dict[str, list] = {m: [] for m in modes}
    pool_f: dict[str, list] = {m: [] for m in modes}
    for k, item in enumerate(instances):
        inst = getattr(item, "instance", item)
        label = getattr(item, "label", None)
        try:
            rows = []
            tic = time.perf_counter()
            ref = best_known(inst, backend, time_limit)
            rows.append(("backend", ref, time.perf_counter() - tic))
            if label is None and ref.assignment is not None:
                label = ref.assignment
            for mode in modes:
                gcfg = GuidanceConfig(**{**guidance.__dict__, "enabled": mode == "guided"})
                tic = time.perf_counter()
                pool = sample_pool(model, inst, gcfg, steps, schedule, n_candidates, seed + k)
                best = pool.best()
                res = SolveResult("feasible" if best else "infeasible",
                                  None if best is None else best.values,
                                  float("inf") if best is None else evaluate(inst, best.values).objective)
                rows.append((f"sampler/{mode}", res, time.perf_counter() - tic))
                pool_f[mode].append(pool.mean_f())
                if label is not None and inst.num_int:
                    ce[mode].append(metrics_cross_entropy(pool.marginals, label[:inst.num_int]))

                def marg_fn(sub, gcfg=gcfg, k=k):
                    return sample_pool(model, sub, gcfg, steps, schedule, n_candidates, seed + k).marginals

                for s in strategies:
                    tic = time.perf_counter()
                    res = run_strategy(s, pool.marginals, inst, strategy_cfg, backend, time_limit, marg_fn)
                    rows.append((f"{s}/{mode}", res, time.perf_counter() - tic))
        except Exception as exc:  # per-instance failure, keep going
            log.warning("evaluation of %s failed: %s", inst.name, exc)
            report.failures.append((inst.name, str(exc)))
            continue
        objs = [r.objective for _, r, _ in rows if r.assignment is not None]
        bks = min(objs) if objs else float("nan")
        for method, res, wall in rows:
            if res.assignment is not None:
                feas = evaluate(inst, res.assignment, FEAS_TOL).feasible
                report.records.append(EvalRecord(inst.name, method, res.objective, bks,
                                                 metrics_gap(res.objective, bks), wall, feas, res.status))
            else:
                report.records.append(EvalRecord(inst.name, method, float("nan"), bks, float("nan"),
                                                 wall, True, res.status))
    report.cross_entropy = {m: float(np.mean(v)) for m, v in ce.items() if v}
    report.mean_pool_f = {m: float(np.mean(v)) for m, v in pool_f.items() if v}
    return report


# -- report files --------------------------------------------------------------------

CSV_FIELDS = ("instance", "method", "obj", "bks", "gap", "wall_time_s", "feasible", "status")


def records_to_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow([r.instance, r.method, repr(r.obj), repr(r.bks), repr(r.gap),
                    repr(r.wall_time_s), int(r.feasible), r.status])
    return buf.getvalue()


def records_from_csv(text: str) -> list[EvalRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [EvalRecord(r["instance"], r["method"], float(r["obj"]), float(r["bks"]), float(r["gap"]),
                       float(r["wall_time_s"]), bool(int(r["feasible"])), r["status"]) for r in rows]


def summary_text(report: EvalReport) -> str:
    methods = report.methods()
    out = ["OBJ / GAP per instance", ""]
    header = ["instance", "BKS"] + methods
    lines = [header]
    by = {(r.instance, r.method): r for r in report.records}
    for name in report.instances():
        rec = [by.get((name, m)) for m in methods]
        bks = next((r.bks for r in rec if r is not None), float("nan"))
        cells = [name, f"{bks:.2f}"]
        for r in rec:
            cells.append("-" if r is None or not math.isfinite(r.obj) else f"{r.obj:.2f} / {r.gap:.2f}")
        lines.append(cells)
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in lines]
    out += ["", "mean GAP"]
    out += [f"  {m}: {report.mean_gap(m):.4f}" for m in methods]
    if report.cross_entropy:
        out += ["", "mean cross-entropy of pool marginals"]
        out += [f"  {m}: {v:.6f}" for m, v in report.cross_entropy.items()]
    imps = report.improvements()
    if imps:
        out += ["", "guidance effect (mean GAP unguided -> guided, Imp)"]
        out += [f"  {s}: {a:.4f} -> {b:.4f}  {format_imp(i)}" for s, (a, b, i) in imps.items()]
    if report.failures:
        out += ["", "failures"] + [f"  {n}: {msg}" for n, msg in report.failures]
    return "\n".join(out) + "\n"


def write_report(report: EvalReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_to_csv(report.records), encoding="utf-8")
    (out / "summary.txt").write_text(summary_text(report), encoding="utf-8")
    return out
