"""Command-line entry point ``fmip``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("fmip")


def _add_guidance_flags(p):
    p.add_argument("--no-guidance", action="store_true", help="plain (unguided) sampling")
    p.add_argument("--gamma", type=float, help="violation penalty weight")
    p.add_argument("--rho", type=float, help="continuous guidance step size")
    p.add_argument("--tau", type=float, help="guidance temperature")
    p.add_argument("--samples", type=int, help="integer samples per guided step")
    p.add_argument("--iters", type=int, help="continuous guidance iterations per step")
    p.add_argument("--steps", type=int, help="schedule steps")
    p.add_argument("--schedule", choices=("cosine", "uniform"))
    p.add_argument("--candidates", type=int, help="number of sampled candidates")
    p.add_argument("--seed", type=int, default=0)


def _guidance_from(args, cfg):
    from fmip.guidance import GuidanceConfig

    g = dict(cfg.guidance.__dict__)
    for flag, key in (("gamma", "gamma"), ("rho", "rho"), ("tau", "tau"),
                      ("samples", "n_samples"), ("iters", "n_iter")):
        if getattr(args, flag) is not None:
            g[key] = getattr(args, flag)
    if args.no_guidance:
        g["enabled"] = False
    return GuidanceConfig(**g)


def _config(path):
    from fmip.config import ExperimentConfig, load_config

    return load_config(path) if path else ExperimentConfig()


def _backend(cfg, name=None):
    from fmip.backend import make_backend

    name = name or cfg.backend.name
    if name in ("bnb", "builtin"):
        return make_backend(name, gap_tol=cfg.backend.gap_tol)
    if name == "external":
        return make_backend(name, cmd_template=cfg.backend.command or None)
    return make_backend(name)


def cmd_generate(args):
    from fmip.generators import GenSpec, generate, make_mixed, spec_to_dict, write_dataset

    specs, insts = [], []
    for k in range(args.count):
        spec = GenSpec(args.family, seed=args.seed + k, rows=args.rows, cols=args.cols,
                       density=args.density, nodes=args.nodes, edge_prob=args.edge_prob,
                       items=args.items, bids=args.bids)
        insts.append(make_mixed(spec, args.mixed) if args.mixed > 0 else generate(spec))
        specs.append({**spec_to_dict(spec), "frac_continuous": args.mixed})
    write_dataset(args.out, insts, None, specs)
    print(f"wrote {len(insts)} instances to {args.out}")


def cmd_label(args):
    from fmip.generators import label_dataset, read_dataset, write_dataset

    cfg = _config(args.config)
    insts, _ = read_dataset(args.dataset)
    limit = args.time_limit if args.time_limit is not None else cfg.backend.time_limit
    labels = label_dataset(insts, _backend(cfg, args.backend), limit, args.workers)
    manifest = json.loads((Path(args.dataset) / "manifest.json").read_text(encoding="utf-8"))
    specs = [e.get("spec") for e in manifest["pairs"]]
    write_dataset(args.dataset, insts, labels, specs)
    print(f"labeled {len(labels)}/{len(insts)} instances")


def cmd_train(args):
    import dataclasses

    from fmip.generators import read_dataset
    from fmip.model import ModelConfig
    from fmip.train import train

    cfg = _config(args.config)
    _, labeled = read_dataset(args.dataset, require_labels=True)
    tcfg = cfg.train
    if args.epochs is not None:
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
    K = max(lab.instance.int_bound for lab in labeled)
    mcfg = ModelConfig(**{**cfg.model.__dict__, "int_categories": K + 1})
    resume = json.loads(Path(args.resume).read_text(encoding="utf-8")) if args.resume else None
    res = train(labeled, mcfg, tcfg, resume=resume, progress=True)
    Path(args.out).write_text(json.dumps(res.checkpoint), encoding="utf-8")
    if res.loss_curve:
        first, last = res.loss_curve[0]["loss"], res.loss_curve[-1]["loss"]
        print(f"trained {len(res.loss_curve)} epochs, loss {first:.4f} -> {last:.4f}; "
              f"batch size {res.batch_size}; checkpoint {args.out}")


def cmd_sample(args):
    from fmip.evaluation import sample_pool
    from fmip.milp import load_instance
    from fmip.model import load_checkpoint

    cfg = _config(args.config)
    model, _ = load_checkpoint(args.ckpt)
    inst = load_instance(args.instance)
    g = _guidance_from(args, cfg)
    pool = sample_pool(model, inst, g, args.steps or cfg.sampling.steps,
                       args.schedule or cfg.sampling.schedule,
                       args.candidates or cfg.sampling.candidates, args.seed)
    pool.save(args.pool)
    best = pool.best()
    print(f"{len(pool.candidates)} candidates, {pool.num_feasible} feasible, "
          f"best f = {best.f if best else float('nan'):.6g}; pool {args.pool}")


def _marginal_predictor(args, cfg):
    """Closure sampling a pool for an instance and returning its marginals."""
    from fmip.evaluation import sample_pool
    from fmip.model import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    g = _guidance_from(args, cfg)

    def marg_fn(inst):
        return sample_pool(model, inst, g, args.steps or cfg.sampling.steps,
                           args.schedule or cfg.sampling.schedule,
                           args.candidates or cfg.sampling.candidates, args.seed).marginals

    return marg_fn


def cmd_solve(args):
    from fmip.downstream import parse_params
    from fmip.evaluation import run_strategy
    from fmip.guidance import CandidatePool
    from fmip.milp import load_instance, save_assignment

    cfg = _config(args.config)
    inst = load_instance(args.instance)
    for name in ("nd", "ps", "pmvb", "apollo"):
        text = getattr(args, name)
        if text:
            setattr(cfg.strategies, name, parse_params(name, text))
    marg_fn = _marginal_predictor(args, cfg) if args.ckpt else None
    if args.pool:
        marg = CandidatePool.load(args.pool).marginals
    elif marg_fn is not None:
        marg = marg_fn(inst)
    else:
        raise SystemExit("solve needs --pool or --ckpt")
    if args.strategy == "apollo" and marg_fn is None:
        raise SystemExit("apollo re-predicts marginals and needs --ckpt")
    limit = args.time_limit if args.time_limit is not None else cfg.backend.time_limit
    res = run_strategy(args.strategy, marg, inst, cfg.strategies, _backend(cfg, args.backend),
                       limit, marg_fn)
    print(f"status {res.status}, objective {res.objective:.6g}, {res.wall_time_s:.2f}s")
    if args.out and res.assignment is not None:
        save_assignment(args.out, res.assignment, res.objective)
    return 0 if res.assignment is not None else 1


def cmd_eval(args):
    from fmip.evaluation import evaluate_model, write_report
    from fmip.generators import read_dataset
    from fmip.model import load_checkpoint

    cfg = _config(args.config)
    model, _ = load_checkpoint(args.ckpt)
    insts, labeled = read_dataset(args.testset)
    by_name = {lab.instance.name: lab for lab in labeled}
    items = [by_name.get(i.name, i) for i in insts]
    strategies = [s for s in args.strategies.split(",") if s]
    limit = args.time_limit if args.time_limit is not None else cfg.backend.time_limit
    report = evaluate_model(model, items, strategies, _backend(cfg, args.backend), cfg.guidance,
                            cfg.strategies, limit, cfg.sampling.steps, cfg.sampling.schedule,
                            cfg.sampling.candidates, cfg.sampling.seed)
    out = write_report(report, args.report)
    print((out / "summary.txt").read_text(encoding="utf-8"))


def cmd_selfcheck(args):
    from fmip.selfcheck import run_acceptance_suite

    manifest = run_acceptance_suite(quick=args.quick, only=args.only)
    text = json.dumps(manifest, indent=1)
    if args.manifest:
        Path(args.manifest).write_text(text, encoding="utf-8")
    for c in manifest["criteria"]:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['id']:>2} {c['name']}: {c['detail']}")
    failed = [c["id"] for c in manifest["criteria"] if not c["passed"]]
    if failed:
        print(f"failing criteria: {failed}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fmip", description="Flow-matching MILP solution sampler")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--family", required=True, choices=("set_cover", "indep_set", "comb_auction"))
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--cols", type=int, default=40)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--nodes", type=int, default=15)
    p.add_argument("--edge-prob", type=float, default=0.25)
    p.add_argument("--items", type=int, default=12)
    p.add_argument("--bids", type=int, default=20)
    p.add_argument("--mixed", type=float, default=0.0, help="fraction of variables made continuous")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="solve dataset instances and store labels")
    p.add_argument("dataset")
    p.add_argument("--backend", choices=("bnb", "brute", "external"))
    p.add_argument("--time-limit", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a model on a labeled dataset")
    p.add_argument("dataset")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a candidate pool for one instance")
    p.add_argument("ckpt")
    p.add_argument("instance")
    p.add_argument("--config")
    p.add_argument("--pool", required=True)
    _add_guidance_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="run a downstream strategy")
    p.add_argument("instance")
    p.add_argument("--strategy", required=True, choices=("nd", "ps", "pmvb", "apollo"))
    p.add_argument("--pool")
    p.add_argument("--ckpt")
    p.add_argument("--config")
    p.add_argument("--backend", choices=("bnb", "brute", "external"))
    p.add_argument("--time-limit", type=float)
    p.add_argument("--nd", help="[K_nd, alpha]")
    p.add_argument("--ps", help="[k0, k1, delta]")
    p.add_argument("--pmvb", help="[conf, threshold]")
    p.add_argument("--apollo", help="[k0, k1, delta, iterations]")
    p.add_argument("--out", help="write the incumbent as an assignment file")
    _add_guidance_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    p.add_argument("ckpt")
    p.add_argument("testset")
    p.add_argument("--strategies", default="nd,ps,pmvb,apollo")
    p.add_argument("--config")
    p.add_argument("--backend", choices=("bnb", "brute", "external"))
    p.add_argument("--time-limit", type=float)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selfcheck", help="run the acceptance checks")
    p.add_argument("--manifest", help="write the JSON manifest here")
    p.add_argument("--quick", action="store_true", help="skip the training experiments")
    p.add_argument("--only", type=int, nargs="*", help="criterion ids to run")
    p.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    rc = args.func(args)
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
