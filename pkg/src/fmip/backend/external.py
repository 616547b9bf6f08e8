"""Subprocess adapter for third-party solvers.

The command template may reference ``{input}`` (LP file written by us),
``{output}`` (solution file the solver must write as ``name value`` lines)
and ``{time_limit}``.  The template is split with :func:`shlex.split` and run
without a shell.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
import time
from pathlib import Path

from fmip.backend.lpformat import LPFormatError, parse_solution, write_lp
from fmip.backend.result import ERROR, FEASIBLE, INFEASIBLE, TIMEOUT, SolveResult
from fmip.milp import MilpInstance, evaluate

log = logging.getLogger(__name__)

ENV_VAR = "FMIP_EXTERNAL_SOLVER"


def external_solve(inst: MilpInstance, cmd_template: str | None = None,
                   time_limit_s: float = 60.0) -> SolveResult:
    cmd_template = cmd_template or os.environ.get(ENV_VAR)
    if not cmd_template:
        return SolveResult(ERROR, message=f"no command template (set {ENV_VAR})")
    start = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="fmip-ext-") as tmp:
        lp_path = Path(tmp) / "model.lp"
        sol_path = Path(tmp) / "model.sol"
        lp_path.write_text(write_lp(inst), encoding="utf-8")
        fields = {"input": str(lp_path), "output": str(sol_path), "time_limit": f"{time_limit_s:g}"}
        argv = [tok.format(**fields) for tok in shlex.split(cmd_template)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True,
                                  timeout=max(time_limit_s, 0.0) + 5.0)
        except subprocess.TimeoutExpired:
            return SolveResult(TIMEOUT, wall_time_s=time.perf_counter() - start,
                               message="external solver timed out")
        except OSError as exc:
            return SolveResult(ERROR, wall_time_s=time.perf_counter() - start,
                               message=f"cannot run external solver: {exc}")
        elapsed = time.perf_counter() - start
        diag = (proc.stdout[-2000:] + proc.stderr[-2000:]).strip()
        if proc.returncode != 0:
            return SolveResult(ERROR, wall_time_s=elapsed,
                               message=f"exit code {proc.returncode}: {diag}")
        if not sol_path.exists() or not sol_path.read_text(encoding="utf-8").strip():
            return SolveResult(INFEASIBLE, wall_time_s=elapsed, message=diag)
        try:
            x = parse_solution(sol_path.read_text(encoding="utf-8"), inst.num_vars)
        except (LPFormatError, ValueError) as exc:
            return SolveResult(ERROR, wall_time_s=elapsed, message=f"bad solution file: {exc}")
    report = evaluate(inst, x)
    if not report.feasible:
        log.warning("external solution for %s fails re-evaluation (max violation %.3g)",
                    inst.name, report.max_violation)
        return SolveResult(ERROR, wall_time_s=elapsed, message="returned point is infeasible")
    return SolveResult(FEASIBLE, assignment=x, objective=report.objective, wall_time_s=elapsed)
