"""Residual tripartite GCN mapping a noised solution graph to clean-data predictions.

Each layer first updates constraint embeddings from both variable partitions
(``TriConv``), then each variable partition from the refreshed constraints
(``BiConv``, a ``TriConv`` whose second source is empty).  A per-layer time
MLP adds a sinusoidal encoding of ``t`` to every node.

Graphs of different sizes are batched as a disjoint union; ``*_graph``
index vectors map each node to its graph so per-graph times broadcast.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from fmip.graph import TripartiteGraph

CKPT_VERSION = "fmip-ckpt-1"
TIME_SCALE = 1000.0
VAR_FEATS = 6


@dataclass
class ModelConfig:
    layers: int = 12
    hidden: int = 64
    int_categories: int = 2
    out_dim_cont: int = 1
    residual: bool = True

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be >= 1")
        if self.hidden % 2:
            raise ValueError("hidden must be even for the time encoding")
        if self.int_categories < 2:
            raise ValueError("int_categories must be >= 2")
        if self.out_dim_cont != 1:
            raise ValueError("only scalar continuous outputs are supported")


class ModelOutput(NamedTuple):
    int_logits: torch.Tensor  # (q, K+1)
    cont_values: torch.Tensor  # (n - q,)


def time_embedding(t, h: int) -> torch.Tensor:
    """Sinusoidal encoding of ``t * 1000``; rows for a batch of times."""
    if h % 2:
        raise ValueError("embedding width must be even")
    t = torch.as_tensor(t, dtype=torch.get_default_dtype())
    scalar = t.dim() == 0
    t = t.reshape(-1, 1)
    i = torch.arange(h // 2, dtype=t.dtype)
    arg = t * TIME_SCALE / torch.pow(torch.tensor(10000.0, dtype=t.dtype), 2 * i / h)
    emb = torch.stack([torch.sin(arg), torch.cos(arg)], dim=-1).reshape(len(t), h)
    return emb[0] if scalar else emb


def _mlp(d_in: int, h: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, h), nn.GELU(), nn.Linear(h, d_out))


class GraphBatch:
    """Disjoint union of static tripartite graphs as tensors.

    Edge index rows are ``[constraint, variable]`` in batch-global numbering.
    """

    def __init__(self, graphs: Sequence[TripartiteGraph], dtype=None):
        dtype = dtype or torch.get_default_dtype()
        self.graphs = list(graphs)
        self.num_graphs = len(self.graphs)
        nq = [g.num_int for g in graphs]
        nc = [g.num_cont for g in graphs]
        nm = [g.num_cons for g in graphs]
        self.int_sizes, self.cont_sizes, self.con_sizes = nq, nc, nm
        off_q = np.concatenate([[0], np.cumsum(nq)])
        off_c = np.concatenate([[0], np.cumsum(nc)])
        off_m = np.concatenate([[0], np.cumsum(nm)])
        self.int_offsets, self.cont_offsets = off_q, off_c

        def cat(arrs, width):
            arrs = [np.asarray(a, dtype=float).reshape(-1, width) for a in arrs]
            return torch.tensor(np.concatenate(arrs) if arrs else np.zeros((0, width)), dtype=dtype)

        self.ivar_static = cat([g.ivar_feats for g in graphs], 5)
        self.cvar_static = cat([g.cvar_feats for g in graphs], 5)
        self.con_x = cat([g.con_feats for g in graphs], 1)

        def edges(kind, var_off):
            idx, w = [], []
            for k, g in enumerate(graphs):
                e = getattr(g, f"{kind}_edge_index")
                idx.append(np.asarray(e, dtype=np.int64).reshape(2, -1)
                           + np.array([[off_m[k]], [var_off[k]]]))
                w.append(np.asarray(getattr(g, f"{kind}_edge_weight"), dtype=float).reshape(-1))
            idx = np.concatenate(idx, axis=1) if idx else np.zeros((2, 0), dtype=np.int64)
            w = np.concatenate(w) if w else np.zeros(0)
            return torch.tensor(idx, dtype=torch.long), torch.tensor(w, dtype=dtype)[:, None]

        self.int_edges, self.int_w = edges("int", off_q)
        self.cont_edges, self.cont_w = edges("cont", off_c)
        self.ivar_graph = torch.repeat_interleave(torch.arange(self.num_graphs), torch.tensor(nq, dtype=torch.long))
        self.cvar_graph = torch.repeat_interleave(torch.arange(self.num_graphs), torch.tensor(nc, dtype=torch.long))
        self.con_graph = torch.repeat_interleave(torch.arange(self.num_graphs), torch.tensor(nm, dtype=torch.long))

    @property
    def num_int(self) -> int:
        return len(self.ivar_static)

    @property
    def num_cont(self) -> int:
        return len(self.cvar_static)

    @property
    def num_cons(self) -> int:
        return len(self.con_x)

    def split_int(self, x):
        return list(torch.split(x, self.int_sizes)) if self.num_graphs else []

    def split_cont(self, x):
        return list(torch.split(x, self.cont_sizes)) if self.num_graphs else []


class TriConv(nn.Module):
    """Gated two-source message passing into a target partition."""

    def __init__(self, h: int):
        super().__init__()
        self.lin_t = nn.Linear(h, h)
        self.lin_s1 = nn.Linear(h, h)
        self.lin_s2 = nn.Linear(h, h)
        self.lin_e = nn.Linear(1, h)
        self.lin_final = nn.Linear(h, h)
        self.lin_fg = nn.Linear(2 * h, h)
        self.lin_o1 = nn.Linear(2 * h, h)
        self.lin_o2 = nn.Linear(h, h)
        self.ln_pn = nn.LayerNorm(h)
        self.ln_pc = nn.LayerNorm(h)
        self.ln_out = nn.LayerNorm(h)

    def aggregate(self, target, src, edges, weight, lin_s):
        """Sum of messages; ``edges`` rows are ``[target, source]``."""
        out = target.new_zeros(target.shape)
        if edges.shape[1] == 0:
            return out
        pre = self.lin_t(target)[edges[0]] + lin_s(src)[edges[1]] + self.lin_e(weight)
        msg = self.lin_final(F.gelu(self.ln_pn(pre)))
        return out.index_add(0, edges[0], msg)

    def forward(self, target, src1, edges1, w1, src2=None, edges2=None, w2=None,
                residual: bool = False):
        a1 = self.aggregate(target, src1, edges1, w1, self.lin_s1)
        if src2 is None:
            a2 = torch.zeros_like(a1)
        else:
            a2 = self.aggregate(target, src2, edges2, w2, self.lin_s2)
        g = torch.sigmoid(self.lin_fg(torch.cat([a1, a2], dim=-1)))
        pooled = self.ln_pc(g * a1 + (1 - g) * a2)
        out = self.ln_out(self.lin_o2(F.gelu(self.lin_o1(torch.cat([pooled, target], dim=-1)))))
        return out + target if residual else out


class TriGCNLayer(nn.Module):
    def __init__(self, h: int):
        super().__init__()
        self.time_mlp = _mlp(h, h, h)
        self.tri = TriConv(h)
        self.bi_int = TriConv(h)
        self.bi_cont = TriConv(h)
        self.mlp_con = _mlp(h, h, h)
        self.mlp_int = _mlp(h, h, h)
        self.mlp_cont = _mlp(h, h, h)

    def forward(self, b: GraphBatch, h_i, h_c, h_k, emb, residual: bool):
        ht = self.time_mlp(emb)
        ie, ce = b.int_edges, b.cont_edges
        # the outer update carries the residual, so the convolutions run without it
        upd = self.mlp_con(self.tri(h_k, h_i, ie, b.int_w, h_c, ce, b.cont_w))
        new_k = ht[b.con_graph] + upd + (h_k if residual else 0)
        upd_i = self.mlp_int(self.bi_int(h_i, new_k, ie.flip(0), b.int_w))
        new_i = ht[b.ivar_graph] + upd_i + (h_i if residual else 0)
        upd_c = self.mlp_cont(self.bi_cont(h_c, new_k, ce.flip(0), b.cont_w))
        new_c = ht[b.cvar_graph] + upd_c + (h_c if residual else 0)
        return new_i, new_c, new_k


class TriGCN(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.enc_int = _mlp(VAR_FEATS, h, h)
        self.enc_cont = _mlp(VAR_FEATS, h, h)
        self.enc_con = _mlp(1, h, h)
        self.layers = nn.ModuleList(TriGCNLayer(h) for _ in range(cfg.layers))
        self.head_int = _mlp(h, h, cfg.int_categories)
        self.head_cont = _mlp(h, h, cfg.out_dim_cont)

    def forward(self, batch: GraphBatch, d, c, t) -> ModelOutput:
        """``d``, ``c``: concatenated states; ``t``: one time per graph (or scalar)."""
        dtype = batch.ivar_static.dtype
        d = torch.as_tensor(d, dtype=dtype).reshape(-1, 1)
        c = torch.as_tensor(c, dtype=dtype).reshape(-1, 1)
        t = torch.as_tensor(t, dtype=dtype).reshape(-1)
        if len(t) == 1 and batch.num_graphs != 1:
            t = t.expand(batch.num_graphs)
        if len(d) != batch.num_int or len(c) != batch.num_cont or len(t) != batch.num_graphs:
            raise ValueError("state/time sizes do not match the graph batch")
        h_i = self.enc_int(torch.cat([batch.ivar_static, d], dim=1))
        h_c = self.enc_cont(torch.cat([batch.cvar_static, c], dim=1))
        h_k = self.enc_con(batch.con_x)
        emb = time_embedding(t, self.cfg.hidden).to(dtype)
        for layer in self.layers:
            h_i, h_c, h_k = layer(batch, h_i, h_c, h_k, emb, self.cfg.residual)
        return ModelOutput(self.head_int(h_i), self.head_cont(h_c)[:, 0])


def init_params(model: nn.Module, seed: int) -> nn.Module:
    """Uniform fan-in init U(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer norms 1/0."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=gen, dtype=torch.float64)
                                 .mul(2 * bound).sub(bound))
                mod.bias.copy_(torch.rand(mod.bias.shape, generator=gen, dtype=torch.float64)
                               .mul(2 * bound).sub(bound))
            elif isinstance(mod, nn.LayerNorm):
                mod.weight.fill_(1.0)
                mod.bias.fill_(0.0)
    return model


def build_model(cfg: ModelConfig, seed: int = 0, dtype=torch.float32) -> TriGCN:
    model = TriGCN(cfg).to(dtype)
    return init_params(model, seed)


# -- checkpoints -----------------------------------------------------------------


def encode_array(a) -> dict:
    arr = np.ascontiguousarray(np.asarray(a, dtype="<f4"))
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()


def checkpoint_dict(model: TriGCN, seed: int, **extra) -> dict:
    params = {name: encode_array(p.detach().cpu().numpy())
              for name, p in model.state_dict().items()}
    return {"version": CKPT_VERSION, "config": asdict(model.cfg), "seed": int(seed),
            "params": params, **extra}


def save_checkpoint(path, model: TriGCN, seed: int, **extra) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model, seed, **extra)), encoding="utf-8")


def model_from_checkpoint(ckpt: dict, dtype=torch.float32) -> TriGCN:
    if ckpt.get("version") != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt.get('version')!r}")
    model = TriGCN(ModelConfig(**ckpt["config"])).to(dtype)
    state = model.state_dict()
    missing = set(state) - set(ckpt["params"])
    if missing:
        raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
    loaded = {}
    for name, ref in state.items():
        arr = decode_array(ckpt["params"][name])
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValueError(f"{name}: shape {arr.shape} != {tuple(ref.shape)}")
        loaded[name] = torch.tensor(arr, dtype=dtype)
    model.load_state_dict(loaded)
    return model


def load_checkpoint(path, dtype=torch.float32):
    """Return ``(model, checkpoint_dict)``."""
    ckpt = json.loads(Path(path).read_text(encoding="utf-8"))
    return model_from_checkpoint(ckpt, dtype), ckpt
