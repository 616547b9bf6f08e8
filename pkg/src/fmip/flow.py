"""Conditional probability paths, their generators, stepping rules and the training loss.

Continuous block: Gaussian path ``c_t ~ N(t c_1, (1-t)^2 I)`` with velocity
``(c_1 - c_t) / (1 - t)``.  Integer block: each coordinate is categorical over
``{0..K}`` with mass ``t + (1-t)/(K+1)`` on the label, jumping toward the
label at rate ``1 / (1 - t)`` while it is elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from fmip.graph import SolutionState

EPS_TRAIN = 1e-3


@dataclass(frozen=True)
class Schedule:
    steps: int
    kind: str
    times: np.ndarray

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)


def cosine_schedule(n: int) -> Schedule:
    """``t_k = sin(pi k / 2N)``: fine steps near the data end t = 1."""
    if n < 1:
        raise ValueError("schedule needs at least one step")
    times = np.sin(np.pi * np.arange(n + 1) / (2 * n))
    times[0], times[-1] = 0.0, 1.0
    return Schedule(n, "cosine", times)


def uniform_schedule(n: int) -> Schedule:
    if n < 1:
        raise ValueError("schedule needs at least one step")
    times = np.arange(n + 1) / n
    times[-1] = 1.0
    return Schedule(n, "uniform", times)


def make_schedule(kind: str, n: int) -> Schedule:
    if kind == "cosine":
        return cosine_schedule(n)
    if kind == "uniform":
        return uniform_schedule(n)
    raise ValueError(f"unknown schedule {kind!r}")


def _check_t(t):
    if np.any(np.asarray(t) >= 1):
        raise ValueError("time must be < 1 (the path is singular at t = 1)")


def path_probs(d1, t, K: int) -> np.ndarray:
    """Closed-form categorical marginal of the path, shape ``d1.shape + (K+1,)``."""
    d1 = np.asarray(d1, dtype=np.int64)
    t = np.asarray(t, dtype=float)[..., None]
    probs = np.broadcast_to((1 - t) / (K + 1), d1.shape + (K + 1,)).copy()
    np.put_along_axis(probs, d1[..., None],
                      np.take_along_axis(probs, d1[..., None], -1) + t, -1)
    return probs


def sample_categorical(probs, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of the trailing axis (inverse CDF)."""
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cdf[..., -1:]
    return np.minimum((u >= cdf).sum(axis=-1), probs.shape[-1] - 1)


def sample_conditional(d1, c1, t, K: int, rng: np.random.Generator) -> SolutionState:
    """Draw ``(d_t, c_t)`` from the conditional path given the label."""
    d1 = np.asarray(d1, dtype=np.int64)
    c1 = np.asarray(c1, dtype=float)
    if np.any(d1 < 0) or np.any(d1 > K):
        raise ValueError("label categories must lie in 0..K")
    t = float(t)
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    c = t * c1 + (1 - t) * rng.standard_normal(c1.shape)
    keep = rng.random(d1.shape) < t
    d = np.where(keep, d1, rng.integers(0, K + 1, size=d1.shape))
    return SolutionState(d, c, t)


def cond_velocity(c_t, c1, t):
    _check_t(t)
    return (np.asarray(c1, dtype=float) - np.asarray(c_t, dtype=float)) / (1 - t)


def cond_rate(d_t: int, j: int, d1: int, t: float) -> float:
    _check_t(t)
    if d_t == d1:
        return 0.0
    return (1.0 if j == d1 else 0.0) / (1 - t)


def cond_rate_rows(d_t, d1, t, K: int) -> np.ndarray:
    """Vectorized conditional rates, shape ``d_t.shape + (K+1,)``."""
    _check_t(t)
    d_t = np.asarray(d_t, dtype=np.int64)
    d1 = np.asarray(d1, dtype=np.int64)
    onehot = np.eye(K + 1)[d1]
    return onehot * ((d_t != d1) / (1 - np.asarray(t, dtype=float)))[..., None]


def euler_step_cont(c_t, velocity, dt):
    return np.asarray(c_t, dtype=float) + np.asarray(velocity, dtype=float) * dt


def transition_probs(d_t, rates, dt) -> np.ndarray:
    """Next-state probabilities ``delta(j, d_t) + rate_j dt``.

    The diagonal of ``rates`` is ignored; the stay probability absorbs the
    outflow.  Rows whose outflow exceeds 1 are renormalized so the chain moves
    with probability 1, split proportionally to the rates.
    """
    d_t = np.asarray(d_t, dtype=np.int64)
    rates = np.array(rates, dtype=float)
    here = np.eye(rates.shape[-1], dtype=bool)[d_t]
    if np.any(rates[~here] < 0):
        raise ValueError("rate matrix has a negative off-diagonal entry")
    if not np.all(np.isfinite(rates[~here])):
        raise ValueError("rate matrix has a non-finite entry")
    move = np.where(here, 0.0, rates * dt)
    out = move.sum(axis=-1, keepdims=True)
    over = out > 1
    move = np.where(over, move / np.where(over, out, 1.0), move)
    stay = 1 - np.minimum(out, 1.0)
    return move + here * stay


def categorical_step(d_t, rates, dt, rng: np.random.Generator) -> np.ndarray:
    return sample_categorical(transition_probs(d_t, rates, dt), rng)


def model_velocity_and_rates(int_probs, cont_values, d_t, c_t, t):
    """Plug the predicted clean data into the conditional generators.

    Velocity ``(c_hat - c_t)/(1-t)``; rate row ``p(j)/(1-t)`` off the
    current state and 0 on it.
    """
    _check_t(t)
    int_probs = np.asarray(int_probs, dtype=float)
    vel = (np.asarray(cont_values, dtype=float) - np.asarray(c_t, dtype=float)) / (1 - t)
    here = np.eye(int_probs.shape[-1], dtype=bool)[np.asarray(d_t, dtype=np.int64)]
    rates = np.where(here, 0.0, int_probs / (1 - t))
    return vel, rates


def training_loss(int_logits: torch.Tensor, cont_values: torch.Tensor, d1, c1, t, omega: float = 1.0,
                  int_graph=None, cont_graph=None, num_graphs: int | None = None) -> torch.Tensor:
    """``|c_hat - c_1|^2 / (1-t) - omega * sum_i log p(d_1^i)``, averaged over graphs.

    Without graph indices the inputs are a single graph and ``t`` a scalar.
    """
    d1 = torch.as_tensor(d1, dtype=torch.long).reshape(-1)
    c1 = torch.as_tensor(c1, dtype=cont_values.dtype).reshape(-1)
    t = torch.as_tensor(t, dtype=cont_values.dtype).reshape(-1)
    if torch.any(t >= 1):
        raise ValueError("training times must be < 1")
    nll = -F.log_softmax(int_logits, dim=-1).gather(1, d1[:, None])[:, 0]
    sq = (cont_values - c1) ** 2
    if int_graph is None:
        return sq.sum() / (1 - t[0]) + omega * nll.sum()
    B = num_graphs if num_graphs is not None else len(t)
    per_sq = torch.zeros(B, dtype=sq.dtype).index_add(0, torch.as_tensor(cont_graph), sq)
    per_nll = torch.zeros(B, dtype=nll.dtype).index_add(0, torch.as_tensor(int_graph), nll)
    return (per_sq / (1 - t) + omega * per_nll).mean()
