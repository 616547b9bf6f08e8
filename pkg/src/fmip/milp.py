"""MILP data model: evaluation, guidance target, bound projection and JSON I/O.

Instances are always stored in the canonical form

    min  w.x   s.t.  A x <= b,  lb <= x <= ub,  x[:q] integer in {0..K}

with the integer block first.  ``A`` is kept in coordinate form, sorted by
(row, col), so two instances built from the same triples in any order are
identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

FEAS_TOL = 1e-6


class InstanceError(ValueError):
    """Raised for malformed instances or instance documents."""


class DimensionError(ValueError):
    """Raised when a vector does not match the instance dimensions."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(eq=False)
class MilpInstance:
    name: str
    num_vars: int
    num_cons: int
    num_int: int
    int_bound: int
    obj: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.num_vars = int(self.num_vars)
        self.num_cons = int(self.num_cons)
        self.num_int = int(self.num_int)
        self.int_bound = int(self.int_bound)
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.vals, dtype=np.float64).reshape(-1)
        if not (len(rows) == len(cols) == len(vals)):
            raise InstanceError("A: row/col/coef arrays differ in length")
        order = np.lexsort((cols, rows))
        self.rows = _frozen(rows[order], np.int64)
        self.cols = _frozen(cols[order], np.int64)
        self.vals = _frozen(vals[order], np.float64)
        self.obj = _frozen(self.obj, np.float64)
        self.rhs = _frozen(self.rhs, np.float64)
        self.lower = _frozen(self.lower, np.float64)
        self.upper = _frozen(self.upper, np.float64)
        self._validate()

    def _validate(self):
        n, m, q = self.num_vars, self.num_cons, self.num_int
        if n < 0 or m < 0 or not 0 <= q <= n:
            raise InstanceError("num_int: must satisfy 0 <= num_int <= num_vars")
        if self.int_bound < 1:
            raise InstanceError("int_bound: must be >= 1")
        for key, arr, size in (("obj", self.obj, n), ("rhs", self.rhs, m),
                               ("lower", self.lower, n), ("upper", self.upper, n)):
            if len(arr) != size:
                raise InstanceError(f"{key}: expected length {size}, got {len(arr)}")
        if not np.all(np.isfinite(self.obj)):
            raise InstanceError("obj: entries must be finite")
        if not np.all(np.isfinite(self.rhs)):
            raise InstanceError("rhs: entries must be finite")
        if np.any(np.isnan(self.lower)) or np.any(self.lower == np.inf):
            raise InstanceError("lower: entries must be finite or -inf")
        if np.any(np.isnan(self.upper)) or np.any(self.upper == -np.inf):
            raise InstanceError("upper: entries must be finite or +inf")
        if len(self.rows):
            if self.rows.min() < 0 or self.rows.max() >= m:
                raise InstanceError("A: row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= n:
                raise InstanceError("A: col index out of range")
            dup = (np.diff(self.rows) == 0) & (np.diff(self.cols) == 0)
            if np.any(dup):
                k = int(np.argmax(dup))
                raise InstanceError(
                    f"A: duplicate coordinate ({self.rows[k]}, {self.cols[k]})")
        if not np.all(np.isfinite(self.vals)):
            raise InstanceError("A: coefficients must be finite")
        bad = np.flatnonzero(self.lower > self.upper)
        if len(bad):
            i = int(bad[0])
            raise InstanceError(f"lower[{i}] > upper[{i}]")
        lo, hi = self.lower[:q], self.upper[:q]
        if q and (not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi))):
            raise InstanceError("lower/upper: integer variables need finite bounds")
        if q and (lo.min() < 0 or hi.max() > self.int_bound):
            raise InstanceError("lower/upper: integer bounds must lie in [0, int_bound]")

    # -- derived views -------------------------------------------------

    @property
    def num_cont(self) -> int:
        return self.num_vars - self.num_int

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @cached_property
    def A(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)),
                             shape=(self.num_cons, self.num_vars))

    @cached_property
    def dense_A(self) -> np.ndarray:
        return self.A.toarray()

    @property
    def is_binary(self) -> bool:
        return self.int_bound == 1

    def __eq__(self, other):
        if not isinstance(other, MilpInstance):
            return NotImplemented
        return serialize(self) == serialize(other)

    # -- modified copies -------------------------------------------------

    def replace(self, **changes) -> "MilpInstance":
        fields = dict(name=self.name, num_vars=self.num_vars, num_cons=self.num_cons,
                      num_int=self.num_int, int_bound=self.int_bound, obj=self.obj,
                      rows=self.rows, cols=self.cols, vals=self.vals, rhs=self.rhs,
                      lower=self.lower, upper=self.upper)
        fields.update(changes)
        return MilpInstance(**fields)

    def with_bounds(self, lower, upper) -> "MilpInstance":
        return self.replace(lower=lower, upper=upper)

    def fix(self, indices, values) -> "MilpInstance":
        """Copy with ``x[indices] = values`` enforced through lb = ub."""
        lower = np.array(self.lower)
        upper = np.array(self.upper)
        lower[np.asarray(indices, dtype=np.int64)] = values
        upper[np.asarray(indices, dtype=np.int64)] = values
        return self.with_bounds(lower, upper)

    def with_rows(self, coefs: Sequence[dict[int, float]], rhs: Sequence[float]) -> "MilpInstance":
        """Copy with extra ``sum_i coef_i x_i <= rhs`` rows appended."""
        rows, cols, vals = list(self.rows), list(self.cols), list(self.vals)
        for k, row in enumerate(coefs):
            for j, a in row.items():
                if a != 0:
                    rows.append(self.num_cons + k)
                    cols.append(j)
                    vals.append(a)
        return self.replace(num_cons=self.num_cons + len(coefs), rows=rows, cols=cols,
                            vals=vals, rhs=np.concatenate([self.rhs, np.asarray(rhs, float)]))


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    objective: float
    violations: np.ndarray
    max_violation: float
    feasible: bool


def _check_len(inst: MilpInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != inst.num_vars:
        raise DimensionError(f"assignment has length {x.shape[-1]}, expected {inst.num_vars}")
    return x


def evaluate(inst: MilpInstance, x, tol: float = FEAS_TOL) -> EvalReport:
    x = _check_len(inst, x)
    if x.ndim != 1:
        raise DimensionError("evaluate expects a single assignment")
    objective = float(np.dot(inst.obj, x))
    violations = np.maximum(inst.A @ x - inst.rhs, 0.0)
    max_violation = float(violations.max()) if len(violations) else 0.0
    in_bounds = bool(np.all(x >= inst.lower - tol) and np.all(x <= inst.upper + tol))
    d = x[:inst.num_int]
    integral = bool(np.all(np.abs(d - np.round(d)) <= tol))
    return EvalReport(objective, violations, max_violation,
                      max_violation <= tol and in_bounds and integral)


def target_f(inst: MilpInstance, x, gamma: float):
    """Objective plus ``gamma`` times the squared positive constraint violations.

    ``x`` may carry leading batch dimensions; the result then has the same
    leading shape.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    x = _check_len(inst, x)
    flat = x.reshape(-1, inst.num_vars)
    viol = np.maximum(np.asarray(inst.A @ flat.T).T - inst.rhs, 0.0)
    val = flat @ inst.obj + gamma * np.sum(viol * viol, axis=-1)
    if x.ndim == 1:
        return float(val[0])
    return val.reshape(x.shape[:-1])


def target_grad_continuous(inst: MilpInstance, x, gamma: float) -> np.ndarray:
    """Gradient of :func:`target_f` with respect to the continuous block."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    x = _check_len(inst, x)
    flat = x.reshape(-1, inst.num_vars)
    q = inst.num_int
    viol = np.maximum(np.asarray(inst.A @ flat.T).T - inst.rhs, 0.0)
    grad = inst.obj[q:] + 2.0 * gamma * np.asarray(inst.A[:, q:].T @ viol.T).T
    return grad.reshape(x.shape[:-1] + (inst.num_cont,))


def project_bounds(inst: MilpInstance, x, round_integers: bool = False) -> np.ndarray:
    x = np.array(_check_len(inst, x), dtype=np.float64, copy=True)
    if round_integers:
        x[..., :inst.num_int] = np.round(x[..., :inst.num_int])  # ties to even
    return np.clip(x, inst.lower, inst.upper)


# -- serialization -------------------------------------------------------------


def _bound_out(v: float):
    if v == np.inf:
        return "inf"
    if v == -np.inf:
        return "-inf"
    return float(v)


def _bound_in(v, key: str, i: int) -> float:
    if isinstance(v, str):
        if v == "inf":
            return np.inf
        if v == "-inf":
            return -np.inf
        raise InstanceError(f"{key}[{i}]: unknown bound literal {v!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InstanceError(f"{key}[{i}]: expected a number")
    return float(v)


def to_dict(inst: MilpInstance) -> dict[str, Any]:
    return {
        "name": inst.name,
        "num_vars": inst.num_vars,
        "num_cons": inst.num_cons,
        "num_int": inst.num_int,
        "int_bound": inst.int_bound,
        "obj": [float(v) for v in inst.obj],
        "rhs": [float(v) for v in inst.rhs],
        "lower": [_bound_out(v) for v in inst.lower],
        "upper": [_bound_out(v) for v in inst.upper],
        "A": [[int(r), int(c), float(a)] for r, c, a in zip(inst.rows, inst.cols, inst.vals)],
    }


def from_dict(doc: dict[str, Any]) -> MilpInstance:
    if not isinstance(doc, dict):
        raise InstanceError("document: expected a JSON object")
    for key in ("name", "num_vars", "num_cons", "num_int", "int_bound",
                "obj", "rhs", "lower", "upper", "A"):
        if key not in doc:
            raise InstanceError(f"{key}: missing")
    if not isinstance(doc["name"], str):
        raise InstanceError("name: expected a string")
    for key in ("num_vars", "num_cons", "num_int", "int_bound"):
        if isinstance(doc[key], bool) or not isinstance(doc[key], int):
            raise InstanceError(f"{key}: expected an integer")
    for key in ("obj", "rhs"):
        if not isinstance(doc[key], list) or any(
                isinstance(v, bool) or not isinstance(v, (int, float)) for v in doc[key]):
            raise InstanceError(f"{key}: expected an array of numbers")
    for key in ("lower", "upper", "A"):
        if not isinstance(doc[key], list):
            raise InstanceError(f"{key}: expected an array")
    lower = [_bound_in(v, "lower", i) for i, v in enumerate(doc["lower"])]
    upper = [_bound_in(v, "upper", i) for i, v in enumerate(doc["upper"])]
    rows, cols, vals = [], [], []
    for k, triple in enumerate(doc["A"]):
        if (not isinstance(triple, list) or len(triple) != 3
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in triple[:2])
                or isinstance(triple[2], bool) or not isinstance(triple[2], (int, float))):
            raise InstanceError(f"A[{k}]: expected [row, col, coef]")
        rows.append(triple[0])
        cols.append(triple[1])
        vals.append(float(triple[2]))
    return MilpInstance(name=doc["name"], num_vars=doc["num_vars"], num_cons=doc["num_cons"],
                        num_int=doc["num_int"], int_bound=doc["int_bound"],
                        obj=np.array(doc["obj"], dtype=float), rows=rows, cols=cols, vals=vals,
                        rhs=np.array(doc["rhs"], dtype=float), lower=lower, upper=upper)


def serialize(inst: MilpInstance) -> str:
    return json.dumps(to_dict(inst))


def parse(text: str) -> MilpInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"document: invalid JSON ({exc})") from exc
    return from_dict(doc)


def save_instance(inst: MilpInstance, path) -> None:
    Path(path).write_text(serialize(inst), encoding="utf-8")


def load_instance(path) -> MilpInstance:
    return parse(Path(path).read_text(encoding="utf-8"))


def save_assignment(path, values, objective: float | None = None) -> None:
    doc: dict[str, Any] = {"values": [float(v) for v in np.asarray(values, dtype=float)]}
    if objective is not None:
        doc["objective"] = float(objective)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_assignment(path) -> tuple[np.ndarray, float | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "values" not in doc:
        raise InstanceError("values: missing")
    return np.array(doc["values"], dtype=float), doc.get("objective")


def from_dense(A, b, obj, lower, upper, num_int: int, int_bound: int = 1,
               name: str = "instance") -> MilpInstance:
    """Build an instance from a dense constraint matrix (zeros dropped)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.size == 0:
        A = np.zeros((len(b), len(obj)))
    rows, cols = np.nonzero(A)
    return MilpInstance(name=name, num_vars=A.shape[1], num_cons=A.shape[0], num_int=num_int,
                        int_bound=int_bound, obj=obj, rows=rows, cols=cols, vals=A[rows, cols],
                        rhs=b, lower=lower, upper=upper)


def toy_instance(int_bound: int = 5) -> MilpInstance:
    """The two-variable example: min 4x1 + x2, 3x1 + x2 <= 1, x1 + x2 <= 2.

    x1 is integer with 0 <= x1 <= min(5, int_bound) (the lower bound 0 is an
    assumption), x2 is continuous in [0, 3].  ``int_bound=1`` gives the binary
    variant.
    """
    return from_dense([[3.0, 1.0], [1.0, 1.0]], [1.0, 2.0], [4.0, 1.0],
                      [0.0, 0.0], [float(min(5, int_bound)), 3.0], num_int=1,
                      int_bound=int_bound, name="toy")
