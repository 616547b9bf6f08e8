"""Tripartite instance graph and its time-augmented solution graph.

Node partitions: integer variables, continuous variables, constraints.
Variable features are ``[w, lb, ub, has_lb, has_ub]`` (infinite bounds are
written as 0 with the indicator off), constraint features are ``[b]``, and
every nonzero of ``A`` becomes a constraint-variable edge weighted by its
coefficient.  Bounds are features, never constraint nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fmip.milp import MilpInstance


@dataclass
class TripartiteGraph:
    ivar_feats: np.ndarray  # (q, 5)
    cvar_feats: np.ndarray  # (n - q, 5)
    con_feats: np.ndarray  # (m, 1)
    int_edge_index: np.ndarray  # (2, E_int) rows: constraint, integer variable
    int_edge_weight: np.ndarray  # (E_int,)
    cont_edge_index: np.ndarray  # (2, E_cont) rows: constraint, continuous variable
    cont_edge_weight: np.ndarray  # (E_cont,)
    row_scale: np.ndarray  # (m,) divisor applied to each row and its rhs
    obj_scale: float  # divisor applied to w

    @property
    def num_int(self) -> int:
        return len(self.ivar_feats)

    @property
    def num_cont(self) -> int:
        return len(self.cvar_feats)

    @property
    def num_cons(self) -> int:
        return len(self.con_feats)

    def coefficient_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Undo the normalization: return dense ``(A, b)`` in instance units."""
        q, m = self.num_int, self.num_cons
        A = np.zeros((m, q + self.num_cont))
        A[self.int_edge_index[0], self.int_edge_index[1]] = self.int_edge_weight
        A[self.cont_edge_index[0], q + self.cont_edge_index[1]] = self.cont_edge_weight
        return A * self.row_scale[:, None], self.con_feats[:, 0] * self.row_scale


@dataclass
class SolutionState:
    d: np.ndarray
    c: np.ndarray
    t: float


@dataclass
class AugmentedGraph:
    graph: TripartiteGraph
    ivar_x: np.ndarray  # (q, 6)
    cvar_x: np.ndarray  # (n - q, 6)
    t: float

    @property
    def state(self) -> SolutionState:
        return SolutionState(self.ivar_x[:, 5].copy(), self.cvar_x[:, 5].copy(), self.t)


def variable_features(inst: MilpInstance, obj_scale: float = 1.0) -> np.ndarray:
    has_lb = np.isfinite(inst.lower)
    has_ub = np.isfinite(inst.upper)
    return np.stack([
        inst.obj / obj_scale,
        np.where(has_lb, inst.lower, 0.0),
        np.where(has_ub, inst.upper, 0.0),
        has_lb.astype(float),
        has_ub.astype(float),
    ], axis=1)


def encode(inst: MilpInstance, normalize: bool = True) -> TripartiteGraph:
    q, m = inst.num_int, inst.num_cons
    rows, cols, vals = inst.rows, inst.cols, inst.vals
    nz = vals != 0
    rows, cols, vals = rows[nz], cols[nz], vals[nz]
    row_scale = np.ones(m)
    obj_scale = 1.0
    if normalize:
        if len(vals):
            peak = np.zeros(m)
            np.maximum.at(peak, rows, np.abs(vals))
            row_scale = np.where(peak > 0, peak, 1.0)
        peak_w = float(np.abs(inst.obj).max()) if inst.num_vars else 0.0
        obj_scale = peak_w if peak_w > 0 else 1.0
    weights = vals / row_scale[rows]
    feats = variable_features(inst, obj_scale)
    is_int = cols < q
    return TripartiteGraph(
        ivar_feats=feats[:q],
        cvar_feats=feats[q:],
        con_feats=(inst.rhs / row_scale)[:, None],
        int_edge_index=np.stack([rows[is_int], cols[is_int]]).astype(np.int64),
        int_edge_weight=weights[is_int],
        cont_edge_index=np.stack([rows[~is_int], cols[~is_int] - q]).astype(np.int64),
        cont_edge_weight=weights[~is_int],
        row_scale=row_scale,
        obj_scale=obj_scale,
    )


def attach_state(g: TripartiteGraph, s: SolutionState) -> AugmentedGraph:
    d = np.asarray(s.d, dtype=float).reshape(-1)
    c = np.asarray(s.c, dtype=float).reshape(-1)
    if len(d) != g.num_int or len(c) != g.num_cont:
        raise ValueError(f"state sizes ({len(d)}, {len(c)}) do not match graph "
                         f"({g.num_int}, {g.num_cont})")
    return AugmentedGraph(g, np.hstack([g.ivar_feats, d[:, None]]),
                          np.hstack([g.cvar_feats, c[:, None]]), float(s.t))
