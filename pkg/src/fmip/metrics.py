"""Report metrics: primal gap, relative improvement, cross-entropy."""

from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def metrics_gap(obj: float, bks: float) -> float:
    if not (math.isfinite(obj) and math.isfinite(bks)):
        raise ValueError("gap needs finite objective and best-known value")
    return abs(obj - bks)


def metrics_imp(gap_a: float, gap_b: float) -> Optional[float]:
    """Percent reduction from ``gap_a`` to ``gap_b``; None when ``gap_a`` is 0."""
    if not (math.isfinite(gap_a) and math.isfinite(gap_b)):
        raise ValueError("improvement needs finite gaps")
    if gap_a == 0:
        return None
    return (gap_a - gap_b) / gap_a * 100.0


def format_imp(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}%"


def metrics_cross_entropy(marginals, label) -> float:
    """Mean over integer variables of ``-log p_i(label_i)``."""
    marg = np.asarray(marginals, dtype=float)
    lab = np.rint(np.asarray(label, dtype=float)).astype(np.int64)
    if marg.ndim != 2 or len(lab) != len(marg):
        raise ValueError("marginals must be (q, K+1) with one label per row")
    if len(lab) == 0:
        return 0.0
    if lab.min() < 0 or lab.max() >= marg.shape[1]:
        raise ValueError("label outside the marginal support")
    p = marg[np.arange(len(lab)), lab]
    if np.any(p < PROB_FLOOR):
        log.warning("%d labels have probability below %g; clamped",
                    int(np.sum(p < PROB_FLOOR)), PROB_FLOOR)
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))
