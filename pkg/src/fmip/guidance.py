"""Guided sampling of candidate solutions.

Integer moves use a Monte-Carlo estimate of the rate matrix reweighted by
``exp(-f / tau)``, and continuous states take projected gradient-descent
steps on ``f``.  Both steer toward low objective and low violation since
the problem is a minimization.

A predictor is any callable ``(D, C, t) -> (probs, c_hat)`` over a batch of
candidates: ``D`` is ``(B, q)``, ``C`` is ``(B, n-q)``, ``probs`` is
``(B, q, K+1)`` and ``c_hat`` is ``(B, n-q)``.  :class:`ModelPredictor`
wraps a trained network; tests plug in oracles.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from fmip.flow import (
    Schedule,
    categorical_step,
    cond_rate_rows,
    cosine_schedule,
    model_velocity_and_rates,
    sample_categorical,
)
from fmip.graph import TripartiteGraph, encode
from fmip.milp import FEAS_TOL, MilpInstance, evaluate, project_bounds, target_f, target_grad_continuous

log = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray, np.ndarray, float], tuple]


@dataclass
class GuidanceConfig:
    gamma: float = 100.0  # must outweigh raw objective coefficients
    rho: float = 1e-2
    tau: float = 1.0
    n_samples: int = 8
    n_iter: int = 3
    enabled: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.rho <= 0 or self.tau <= 0:
            raise ValueError("rho and tau must be positive")
        if self.n_samples < 1 or self.n_iter < 0:
            raise ValueError("n_samples must be >= 1 and n_iter >= 0")


def normalized_instance(inst: MilpInstance, graph: TripartiteGraph | None = None) -> MilpInstance:
    """Instance rescaled the way the encoder sees it (rows by max |a|, w by max |w|).

    Continuous descent runs on this scale so ``rho`` does not depend on the
    raw magnitude of costs and coefficients.
    """
    g = graph if graph is not None else encode(inst)
    keep = inst.vals != 0
    rows = inst.rows[keep]
    return inst.replace(obj=inst.obj / g.obj_scale, rows=rows, cols=inst.cols[keep],
                        vals=inst.vals[keep] / g.row_scale[rows], rhs=inst.rhs / g.row_scale)


def _stack(inst: MilpInstance, d, c) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), d.shape[:-1] + (inst.num_cont,))
    return np.concatenate([d, c], axis=-1)


def boltzmann_weights(f, tau: float) -> np.ndarray:
    """Normalized ``exp(-f/tau)`` along the last axis.

    The minimum is subtracted first, which leaves the normalized weights
    unchanged and avoids underflow; if a row is still degenerate (all
    infinite or NaN) it falls back to equal weights.
    """
    f = np.asarray(f, dtype=float)
    with np.errstate(invalid="ignore"):
        shifted = -(f - np.min(f, axis=-1, keepdims=True)) / tau
    w = np.exp(shifted)
    total = w.sum(axis=-1, keepdims=True)
    bad = ~np.isfinite(total) | (total <= 0)
    if np.any(bad):
        log.warning("guidance weights degenerate; using an unweighted average")
    w = np.where(bad, 1.0, w)
    return w / w.sum(axis=-1, keepdims=True)


def guided_rate_matrix(d_t, probs, c_hat, inst: MilpInstance, cfg: GuidanceConfig, t: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Boltzmann-weighted average of conditional rates over R sampled labels.

    Shapes: ``d_t`` ``(..., q)``, ``probs`` ``(..., q, K+1)``, ``c_hat``
    ``(..., n-q)``; returns ``(..., q, K+1)``.
    """
    probs = np.asarray(probs, dtype=float)
    d_t = np.asarray(d_t, dtype=np.int64)
    K = probs.shape[-1] - 1
    R = cfg.n_samples
    draws = sample_categorical(np.broadcast_to(probs[..., None, :, :],
                                               probs.shape[:-2] + (R,) + probs.shape[-2:]), rng)
    c_hat = np.asarray(c_hat, dtype=float)[..., None, :]
    f = target_f(inst, _stack(inst, draws, c_hat), cfg.gamma)
    w = boltzmann_weights(f, cfg.tau)
    rows = cond_rate_rows(d_t[..., None, :], draws, t, K)
    return np.einsum("...r,...rik->...ik", w, rows)


def guided_cont_step(c_t, d_sample, c_hat, inst: MilpInstance, cfg: GuidanceConfig,
                     repredict: Optional[Callable[[np.ndarray], np.ndarray]] = None):
    """``n_iter`` projected descent steps ``c <- proj(c - rho * grad f(d, c_hat))``.

    ``repredict(c)`` refreshes ``c_hat`` after each move; without it the
    prediction is held fixed.  Returns ``(c_t, c_hat)``.
    """
    c = np.array(c_t, dtype=float)
    c_hat = np.asarray(c_hat, dtype=float)
    q = inst.num_int
    lo, hi = inst.lower[q:], inst.upper[q:]
    for _ in range(cfg.n_iter):
        grad = target_grad_continuous(inst, _stack(inst, d_sample, c_hat), cfg.gamma)
        c = np.clip(c - cfg.rho * grad, lo, hi)
        if repredict is not None:
            c_hat = np.asarray(repredict(c), dtype=float)
    return c, c_hat


# -- candidate pools ---------------------------------------------------------------


@dataclass
class Candidate:
    values: np.ndarray
    f: float
    feasible: bool


@dataclass
class CandidatePool:
    candidates: list
    marginals: np.ndarray  # (q, K+1)
    instance: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def num_feasible(self) -> int:
        return sum(c.feasible for c in self.candidates)

    def best(self, feasible_only: bool = True) -> Optional[Candidate]:
        pool = [c for c in self.candidates if c.feasible] if feasible_only else self.candidates
        if not pool:
            return None
        return min(pool, key=lambda c: c.f)

    def mean_f(self) -> float:
        return float(np.mean([c.f for c in self.candidates]))

    def to_dict(self) -> dict:
        return {
            "instance": self.instance,
            "candidates": [{"values": [float(v) for v in c.values], "f": float(c.f),
                            "feasible": bool(c.feasible)} for c in self.candidates],
            "marginals": np.asarray(self.marginals, dtype=float).tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CandidatePool":
        cands = [Candidate(np.asarray(c["values"], dtype=float), float(c["f"]), bool(c["feasible"]))
                 for c in doc["candidates"]]
        marg = np.asarray(doc["marginals"], dtype=float)
        if marg.ndim != 2:
            marg = marg.reshape(0, 0) if marg.size == 0 else marg
        return cls(cands, marg, doc.get("instance", ""), doc.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CandidatePool":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def empirical_marginals(D: np.ndarray, K: int) -> np.ndarray:
    D = np.asarray(D, dtype=np.int64)
    if D.shape[1] == 0:
        return np.zeros((0, K + 1))
    counts = np.stack([(D == j).sum(axis=0) for j in range(K + 1)], axis=1)
    return counts / len(D)


class ModelPredictor:
    """Batch a trained network over B copies of one instance graph."""

    def __init__(self, model, graph: TripartiteGraph):
        from fmip.model import GraphBatch

        self.model = model
        self.graph = graph
        self._batch_cls = GraphBatch
        self._batches: dict[int, object] = {}
        self.dtype = next(model.parameters()).dtype

    def _batch(self, B: int):
        if B not in self._batches:
            self._batches[B] = self._batch_cls([self.graph] * B, dtype=self.dtype)
        return self._batches[B]

    def __call__(self, D, C, t):
        B = len(D)
        batch = self._batch(B)
        with torch.no_grad():
            out = self.model(batch, torch.as_tensor(np.asarray(D).reshape(-1), dtype=self.dtype),
                             torch.as_tensor(np.asarray(C).reshape(-1), dtype=self.dtype),
                             torch.full((B,), float(t), dtype=self.dtype))
        probs = torch.softmax(out.int_logits.double(), dim=-1).numpy()
        c_hat = out.cont_values.double().numpy()
        return probs.reshape(B, self.graph.num_int, -1), c_hat.reshape(B, self.graph.num_cont)


def _trajectory(inst, predictor: Predictor, cfg: GuidanceConfig, sched: Schedule, B: int,
                rng: np.random.Generator, guide_inst: MilpInstance):
    q, nc, K = inst.num_int, inst.num_cont, inst.int_bound
    lo_i, hi_i = inst.lower[:q], inst.upper[:q]
    lo_c, hi_c = inst.lower[q:], inst.upper[q:]
    D = np.clip(rng.integers(0, K + 1, size=(B, q)), lo_i, hi_i).astype(np.int64)
    C = np.clip(rng.standard_normal((B, nc)), lo_c, hi_c)
    bad = np.zeros(B, dtype=bool)
    times = sched.times
    for k in range(sched.steps):
        t, dt = float(times[k]), float(times[k + 1] - times[k])
        probs, c_hat = predictor(D, C, t)
        probs, c_hat = np.asarray(probs, dtype=float), np.asarray(c_hat, dtype=float)
        ok = np.all(np.isfinite(probs.reshape(B, -1)), axis=1) & np.all(np.isfinite(c_hat), axis=1)
        bad |= ~ok
        probs = np.where(ok[:, None, None], probs, 1.0 / (K + 1))
        c_hat = np.where(ok[:, None], c_hat, C)
        if cfg.enabled:
            rates = guided_rate_matrix(D, probs, c_hat, inst, cfg, t, rng)
        else:
            rates = model_velocity_and_rates(probs, c_hat, D, C, t)[1]
        D_next = np.clip(categorical_step(D, rates, dt, rng), lo_i, hi_i).astype(np.int64)
        if cfg.enabled and cfg.n_iter > 0 and nc > 0:
            d_sample = sample_categorical(probs, rng)

            def repredict(c):
                return np.asarray(predictor(D, c, t)[1], dtype=float)

            C, c_hat = guided_cont_step(C, d_sample, c_hat, guide_inst, cfg, repredict)
            ok = np.all(np.isfinite(c_hat), axis=1)
            bad |= ~ok
            c_hat = np.where(ok[:, None], c_hat, C)
        vel = (c_hat - C) / (1 - t)
        C = np.clip(C + vel * dt, lo_c, hi_c)
        D = D_next
    X = project_bounds(inst, np.concatenate([D.astype(float), C], axis=1), round_integers=True)
    return X, bad


def sample_solutions(inst: MilpInstance, predictor: Predictor, cfg: GuidanceConfig,
                     sched: Schedule | None = None, n_candidates: int = 64,
                     rng: np.random.Generator | None = None,
                     guide_inst: MilpInstance | None = None) -> CandidatePool:
    """Integrate the learned flow from noise to ``n_candidates`` solutions.

    Integer guidance weighs draws by ``target_f`` on ``inst``, the same
    value the pool reports.  ``guide_inst`` is the instance the continuous
    descent runs on (defaults to ``inst``), so ``rho`` can be set on a
    normalized scale.
    """
    sched = sched or cosine_schedule(30)
    rng = rng or np.random.default_rng(0)
    guide_inst = guide_inst if guide_inst is not None else inst
    X, bad = _trajectory(inst, predictor, cfg, sched, n_candidates, rng, guide_inst)
    if np.any(bad):
        idx = np.flatnonzero(bad)
        log.warning("%d candidates hit non-finite model output; resampling", len(idx))
        X2, bad2 = _trajectory(inst, predictor, cfg, sched, len(idx), rng, guide_inst)
        if np.any(bad2):
            raise FloatingPointError("model produced non-finite output twice")
        X[idx] = X2
    q = inst.num_int
    f = target_f(inst, X, cfg.gamma)
    cands = []
    for x, fx in zip(X, f):
        cands.append(Candidate(x, float(fx), evaluate(inst, x, FEAS_TOL).feasible))
    marg = empirical_marginals(X[:, :q], inst.int_bound)
    return CandidatePool(cands, marg, inst.name,
                         {"guided": cfg.enabled, "steps": sched.steps, "schedule": sched.kind})
