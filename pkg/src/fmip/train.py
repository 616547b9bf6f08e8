"""Training loop for the flow model on labeled instances."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from fmip.flow import EPS_TRAIN, sample_conditional, training_loss
from fmip.generators import LabeledInstance
from fmip.graph import encode
from fmip.model import (
    GraphBatch,
    ModelConfig,
    build_model,
    checkpoint_dict,
    decode_array,
    encode_array,
    model_from_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    lr_schedule: str = "cosine"
    batch_size: int = 0  # 0 = auto
    max_auto_batch: int = 256
    omega: float = 1.0
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning rate must be positive, weight decay >= 0")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0 (0 selects auto)")


@dataclass
class TrainResult:
    model: torch.nn.Module
    checkpoint: dict
    loss_curve: list = field(default_factory=list)
    batch_size: int = 0


class _Item:
    def __init__(self, lab: LabeledInstance, normalize: bool):
        inst = lab.instance
        self.name = inst.name
        self.graph = encode(inst, normalize)
        self.K = inst.int_bound
        q = inst.num_int
        self.d1 = np.rint(lab.label[:q]).astype(np.int64)
        self.c1 = np.asarray(lab.label[q:], dtype=float)


def _batch_loss(model, items: Sequence[_Item], omega: float, rng: np.random.Generator):
    ts = rng.uniform(0.0, 1.0 - EPS_TRAIN, size=len(items))
    states = [sample_conditional(it.d1, it.c1, t, it.K, rng) for it, t in zip(items, ts)]
    batch = GraphBatch([it.graph for it in items], dtype=next(model.parameters()).dtype)
    d = np.concatenate([s.d for s in states]) if states else np.zeros(0)
    c = np.concatenate([s.c for s in states]) if states else np.zeros(0)
    out = model(batch, d, c, ts)
    return training_loss(out.int_logits, out.cont_values,
                         np.concatenate([it.d1 for it in items]),
                         np.concatenate([it.c1 for it in items]), ts, omega,
                         batch.ivar_graph, batch.cvar_graph, len(items))


def probe_batch_size(model, items, omega: float, cap: int) -> int:
    """Largest batch (doubling, then ``cap`` itself) whose forward/backward runs."""
    cap = max(1, min(cap, len(items)))
    sizes = [1 << k for k in range(cap.bit_length()) if (1 << k) < cap] + [cap]
    rng = np.random.default_rng(0)
    best = 1
    for size in sizes:
        try:
            picks = [items[k % len(items)] for k in range(size)]
            _batch_loss(model, picks, omega, rng).backward()
            best = size
        except (RuntimeError, MemoryError):
            break
        finally:
            model.zero_grad(set_to_none=True)
    return best


def _optimizer_state(opt) -> dict:
    st = opt.state_dict()
    state = {str(k): {n: encode_array(v.numpy()) if torch.is_tensor(v) else v
                      for n, v in s.items()} for k, s in st["state"].items()}
    return {"state": state, "param_groups": st["param_groups"]}


def _load_optimizer_state(opt, doc: dict) -> None:
    state = {int(k): {n: torch.tensor(decode_array(v)) if isinstance(v, dict) else v
                      for n, v in s.items()} for k, s in doc["state"].items()}
    for s in state.values():
        if "step" in s and not torch.is_tensor(s["step"]):
            s["step"] = torch.tensor(float(s["step"]))
    opt.load_state_dict({"state": state, "param_groups": doc["param_groups"]})


def train(dataset: Sequence[LabeledInstance], model_cfg: Optional[ModelConfig] = None,
          train_cfg: Optional[TrainConfig] = None, resume: Optional[dict] = None,
          dtype=torch.float32, progress: bool = False) -> TrainResult:
    """Fit the model; ``resume`` is a checkpoint dict written by a previous run."""
    if not dataset:
        raise ValueError("training needs a nonempty labeled dataset")
    train_cfg = train_cfg or TrainConfig()
    K = max(lab.instance.int_bound for lab in dataset)
    if resume is not None:
        model = model_from_checkpoint(resume, dtype)
        model_cfg = model.cfg
        train_cfg = TrainConfig(**{**asdict(train_cfg), **resume.get("train_config", {}),
                                   "epochs": train_cfg.epochs})
    else:
        model_cfg = model_cfg or ModelConfig(int_categories=K + 1)
        model = build_model(model_cfg, train_cfg.seed, dtype)
    if model_cfg.int_categories < K + 1:
        raise ValueError(f"model has {model_cfg.int_categories} categories, data needs {K + 1}")
    items = [_Item(lab, train_cfg.normalize) for lab in dataset]
    torch.manual_seed(train_cfg.seed)

    bs = train_cfg.batch_size
    if resume is not None and resume.get("batch_size"):
        bs = int(resume["batch_size"])
    if bs == 0:
        bs = probe_batch_size(model, items, train_cfg.omega, train_cfg.max_auto_batch)
        log.info("auto batch size: %d", bs)
    steps_per_epoch = math.ceil(len(items) / bs)
    total_steps = steps_per_epoch * train_cfg.epochs

    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.learning_rate,
                            weight_decay=train_cfg.weight_decay)
    start_epoch, curve = 0, []
    if resume is not None:
        if "optimizer" in resume:
            _load_optimizer_state(opt, resume["optimizer"])
        start_epoch = int(resume.get("epoch", 0))
        curve = list(resume.get("loss_curve", []))

    def lr_at(step):
        if train_cfg.lr_schedule == "constant":
            return train_cfg.learning_rate
        return 0.5 * train_cfg.learning_rate * (1 + math.cos(math.pi * step / total_steps))

    tic = time.perf_counter()
    for epoch in range(start_epoch, train_cfg.epochs):
        rng = np.random.default_rng([train_cfg.seed, epoch])
        order = rng.permutation(len(items))
        losses = []
        for s in range(steps_per_epoch):
            step = epoch * steps_per_epoch + s
            for group in opt.param_groups:
                group["lr"] = lr_at(step)
            picks = [items[k] for k in order[s * bs:(s + 1) * bs]]
            loss = _batch_loss(model, picks, train_cfg.omega, rng)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} on batch {[p.name for p in picks]}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        curve.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "lr": lr_at(
            (epoch + 1) * steps_per_epoch - 1)})
        if progress and (epoch + 1) % 10 == 0:
            log.info("epoch %d loss %.5f (%.1fs)", epoch + 1, curve[-1]["loss"],
                     time.perf_counter() - tic)

    ckpt = checkpoint_dict(model, train_cfg.seed, epoch=train_cfg.epochs,
                           train_config=asdict(train_cfg), batch_size=bs,
                           optimizer=_optimizer_state(opt), loss_curve=curve)
    return TrainResult(model, ckpt, curve, bs)
