"""Desk-scale benchmark generators and dataset labeling.

All randomness comes from :class:`SplitMix64`, a fully specified 64-bit
generator, so a :class:`GenSpec` maps to the same instance on any platform.
Maximization families are stored negated (minimization only).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from fmip.milp import (
    FEAS_TOL,
    MilpInstance,
    evaluate,
    load_assignment,
    load_instance,
    save_assignment,
    save_instance,
)

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
FAMILIES = ("set_cover", "indep_set", "comb_auction")


class GenerationError(ValueError):
    pass


class SplitMix64:
    """SplitMix64 (Steele, Lea, Flood 2014).

    state += 0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)
    """

    GOLDEN = 0x9E3779B97F4A7C15
    MUL1 = 0xBF58476D1CE4E5B9
    MUL2 = 0x94D049BB133111EB

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * self.MUL1) & MASK64
        z = ((z ^ (z >> 27)) * self.MUL2) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def integer(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi]."""
        return lo + self.below(hi - lo + 1)

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct values of range(n), partial Fisher-Yates order."""
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


@dataclass
class GenSpec:
    family: str
    seed: int = 0
    rows: int = 20
    cols: int = 40
    density: float = 0.2
    nodes: int = 15
    edge_prob: float = 0.25
    items: int = 12
    bids: int = 20

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise GenerationError(f"unknown family {self.family!r}")
        if self.seed < 0:
            raise GenerationError("seed must be unsigned")
        if self.family == "set_cover":
            if self.rows < 1 or self.cols < 1:
                raise GenerationError("set_cover sizes must be positive")
            if not 0 < self.density < 1:
                raise GenerationError("density must lie in (0, 1)")
        elif self.family == "indep_set":
            if self.nodes < 1:
                raise GenerationError("nodes must be positive")
            if not 0 < self.edge_prob < 1:
                raise GenerationError("edge_prob must lie in (0, 1)")
        else:
            if self.items < 1 or self.bids < 1:
                raise GenerationError("items and bids must be positive")

    def params(self) -> dict:
        keys = {"set_cover": ("rows", "cols", "density"), "indep_set": ("nodes", "edge_prob"),
                "comb_auction": ("items", "bids")}[self.family]
        return {"family": self.family, "seed": self.seed, **{k: getattr(self, k) for k in keys}}

    @property
    def name(self) -> str:
        p = self.params()
        parts = [f"{k}{p[k]}" for k in p if k not in ("family", "seed")]
        return f"{self.family}-{'-'.join(parts)}-s{self.seed}"


def _binary_instance(name, obj, rows, rhs) -> MilpInstance:
    n = len(obj)
    r, c, v = [], [], []
    for j, row in enumerate(rows):
        for col, a in row:
            r.append(j)
            c.append(col)
            v.append(a)
    return MilpInstance(name=name, num_vars=n, num_cons=len(rows), num_int=n, int_bound=1,
                        obj=np.asarray(obj, dtype=float), rows=r, cols=c, vals=v,
                        rhs=np.asarray(rhs, dtype=float), lower=np.zeros(n), upper=np.ones(n))


def indep_set_instance(num_nodes: int, edges: Sequence[tuple[int, int]],
                       name: str = "indep_set") -> MilpInstance:
    """max sum x  s.t.  x_u + x_v <= 1 per edge, stored as min -sum x."""
    rows = [[(min(u, v), 1.0), (max(u, v), 1.0)] for u, v in edges]
    return _binary_instance(name, -np.ones(num_nodes), rows, np.ones(len(rows)))


def _set_cover(spec: GenSpec, rng: SplitMix64) -> MilpInstance:
    per_row = round(spec.density * spec.cols)
    if per_row < 1:
        raise GenerationError(
            f"set_cover: {spec.cols} columns at density {spec.density} leave rows uncoverable")
    rows = []
    for _ in range(spec.rows):
        cols = sorted(rng.sample(spec.cols, per_row))
        rows.append([(c, -1.0) for c in cols])
    cost = [float(rng.integer(1, 100)) for _ in range(spec.cols)]
    return _binary_instance(spec.name, cost, rows, -np.ones(spec.rows))


def _indep_set(spec: GenSpec, rng: SplitMix64) -> MilpInstance:
    edges = [(u, v) for u in range(spec.nodes) for v in range(u + 1, spec.nodes)
             if rng.uniform() < spec.edge_prob]
    return indep_set_instance(spec.nodes, edges, spec.name)


def _comb_auction(spec: GenSpec, rng: SplitMix64) -> MilpInstance:
    values = [1.0 + 99.0 * rng.uniform() for _ in range(spec.items)]
    max_bundle = min(spec.items, 4)
    bundles, prices = [], []
    for _ in range(spec.bids):
        size = rng.integer(1, max_bundle)
        bundle = sorted(rng.sample(spec.items, size))
        bundles.append(bundle)
        price = sum(values[i] for i in bundle) * (1.0 + 0.2 * rng.uniform())
        prices.append(round(price, 2))
    rows = []
    for item in range(spec.items):
        holders = [b for b, bundle in enumerate(bundles) if item in bundle]
        if holders:
            rows.append([(b, 1.0) for b in holders])
    return _binary_instance(spec.name, [-p for p in prices], rows, np.ones(len(rows)))


def generate(spec: GenSpec) -> MilpInstance:
    rng = SplitMix64(spec.seed)
    if spec.family == "set_cover":
        return _set_cover(spec, rng)
    if spec.family == "indep_set":
        return _indep_set(spec, rng)
    return _comb_auction(spec, rng)


def relax_variables(inst: MilpInstance, frac_continuous: float, seed: int):
    """Relax ``ceil(frac * n)`` seeded-random integer variables to continuous.

    Returns ``(instance, perm)`` where ``perm[new] = old`` maps the reordered
    columns (integer block first) back to the input columns.
    """
    if not 0 <= frac_continuous < 1:
        raise ValueError("frac_continuous must lie in [0, 1)")
    n, q = inst.num_vars, inst.num_int
    k = math.ceil(frac_continuous * n)
    rng = SplitMix64(seed ^ 0x5DEECE66D)
    chosen = set(rng.sample(q, min(k, q)))
    ints = [i for i in range(q) if i not in chosen]
    conts = sorted(chosen) + list(range(q, n))
    perm = np.array(ints + conts, dtype=np.int64)
    inverse = np.empty(n, dtype=np.int64)
    inverse[perm] = np.arange(n)
    relaxed = inst.replace(num_int=len(ints), obj=inst.obj[perm], cols=inverse[inst.cols],
                           lower=inst.lower[perm], upper=inst.upper[perm])
    return relaxed, perm


def make_mixed(spec: GenSpec, frac_continuous: float) -> MilpInstance:
    base = generate(spec)
    inst, _ = relax_variables(base, frac_continuous, spec.seed)
    return inst.replace(name=f"{base.name}-mixed{frac_continuous:g}")


# -- labeling ------------------------------------------------------------------


@dataclass
class LabeledInstance:
    instance: MilpInstance
    label: np.ndarray
    label_objective: float
    solve_status: str
    spec: Optional[dict] = None


def _label_one(inst: MilpInstance, backend, time_limit_s: float):
    try:
        res = backend.solve(inst, time_limit_s)
    except Exception as exc:  # backend failures must not stop the run
        log.warning("labeling %s failed: %s", inst.name, exc)
        return None
    if res.assignment is None:
        log.warning("dropping %s: no incumbent (status %s)", inst.name, res.status)
        return None
    report = evaluate(inst, res.assignment, FEAS_TOL)
    if not report.feasible:
        log.warning("dropping %s: incumbent fails feasibility re-check", inst.name)
        return None
    return LabeledInstance(inst, np.asarray(res.assignment, dtype=float), report.objective,
                           res.status)


def label_dataset(instances: Sequence[MilpInstance], backend, time_limit_s: float = 60.0,
                  workers: int = 1) -> list[LabeledInstance]:
    """Solve every instance and keep the best incumbent as its label."""
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda i: _label_one(i, backend, time_limit_s), instances))
    else:
        results = [_label_one(inst, backend, time_limit_s) for inst in instances]
    return [r for r in results if r is not None]


# -- dataset directories ---------------------------------------------------------


def write_dataset(root, instances: Sequence[MilpInstance],
                  labels: Sequence[Optional[LabeledInstance]] | None = None,
                  specs: Sequence[Optional[dict]] | None = None) -> Path:
    """Write ``instances/*.json``, ``labels/*.json`` and ``manifest.json``."""
    root = Path(root)
    (root / "instances").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(exist_ok=True)
    by_name = {lab.instance.name: lab for lab in (labels or []) if lab is not None}
    entries = []
    for k, inst in enumerate(instances):
        ipath = f"instances/{inst.name}.json"
        save_instance(inst, root / ipath)
        entry = {"name": inst.name, "instance": ipath, "label": None,
                 "spec": specs[k] if specs else None}
        lab = by_name.get(inst.name)
        if lab is not None:
            lpath = f"labels/{inst.name}.json"
            save_assignment(root / lpath, lab.label, lab.label_objective)
            entry["label"] = lpath
            entry["status"] = lab.solve_status
        entries.append(entry)
    (root / "manifest.json").write_text(json.dumps({"pairs": entries}, indent=1),
                                        encoding="utf-8")
    return root


def read_dataset(root, require_labels: bool = False):
    """Return ``(instances, labeled)`` from a dataset directory."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    instances, labeled = [], []
    for entry in manifest["pairs"]:
        inst = load_instance(root / entry["instance"])
        instances.append(inst)
        if entry.get("label"):
            values, objective = load_assignment(root / entry["label"])
            if objective is None:
                objective = evaluate(inst, values).objective
            labeled.append(LabeledInstance(inst, values, objective, entry.get("status", "unknown"),
                                           entry.get("spec")))
        elif require_labels:
            raise ValueError(f"{entry['name']}: missing label")
    return instances, labeled


def spec_to_dict(spec: GenSpec) -> dict:
    return asdict(spec)
