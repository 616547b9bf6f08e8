"""Multimodal flow matching for mixed-integer linear programs."""

from fmip.milp import (
    EvalReport,
    InstanceError,
    MilpInstance,
    evaluate,
    load_instance,
    parse,
    project_bounds,
    save_instance,
    serialize,
    target_f,
    target_grad_continuous,
)

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "InstanceError",
    "MilpInstance",
    "evaluate",
    "load_instance",
    "parse",
    "project_bounds",
    "save_instance",
    "serialize",
    "target_f",
    "target_grad_continuous",
]
