"""Command-line entry point: ``d2dfl run | sweep | diag | train-gcn``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import D2DFLError
from .harness import ExperimentConfig, load_config, run_experiment, sweep, write_sweep_csv
from .harness.experiment import instance_config
from .simulation import InstanceConfig, build_instance

log = logging.getLogger("d2dfl")


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()


def cmd_run(args) -> int:
    cfg = _config(args)
    over = {}
    if args.sampler:
        over["sampler"] = args.sampler
    if args.offload:
        over["offload"] = args.offload == "on"
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out:
        over["out_dir"] = args.out
    cfg = replace(cfg, **over)
    res = run_experiment(cfg)
    for m, final in res.final_metrics().items():
        print(f"{m:10s} accuracy={final['accuracy']:.4f} loss={final['global_loss']:.4f}")
    print(f"wrote {res.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    grid = [float(v) for v in args.grid.split(",") if v.strip()]
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    rows = sweep(args.param, grid, cfg, seeds=seeds)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{args.param}.csv"
    write_sweep_csv(rows, args.param, path)
    for r in rows:
        tail = f"  error: {r.error}" if r.error else ""
        print(f"{r.value:g}\tprocessed={r.processed_per_sampled:.3f}\toffloaded={r.offloaded_per_link:.3f}"
              f"\tloss={r.normalized_loss:.4f}\trate={r.active_link_rate:.4f}{tail}")
    print(f"wrote {path}")
    return 0


def cmd_diag(args) -> int:
    from .theory import run_bound_trace

    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    inst = build_instance(instance_config(cfg))
    rng = np.random.default_rng(cfg.seed)
    idx = sorted(int(i) for i in rng.choice(inst.n, size=cfg.S, replace=False))
    tr = run_bound_trace(inst.datasets, idx, inst.n_classes, tau=cfg.tau, T=cfg.T)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr.write_csv(out / "bounds.csv")
    print(f"beta={tr.beta:.4g} L={tr.lipschitz:.4g} kappa={tr.kappa:.4g} xi={tr.xi:.4g} eps={tr.epsilon:.4g}")
    print(f"delta_S vs uniform mean relative difference: {tr.delta_uniform_gap:.3e}")
    print(f"bound violations: {tr.violations()} of {len(tr.t)}")
    print(f"wrote {out / 'bounds.csv'}")
    return 0 if tr.violations() == 0 else 1


def cmd_train_gcn(args) -> int:
    from .gcn import generate_realizations, save_realizations, train_gcn

    base = InstanceConfig(n=args.n, link_prob=args.link_prob)
    rs = generate_realizations(args.realizations, args.s, inst_cfg=base, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.save_realizations:
        save_realizations(rs, args.save_realizations)
    model = train_gcn(rs, epochs=args.epochs, seed=args.seed)
    model.save(out)
    print(f"trained on {len(rs)} realizations; wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2dfl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config")
    r.add_argument("--sampler", choices=["ours", "dpp", "poc", "pyr", "all-nodes", "all"])
    r.add_argument("--offload", choices=["on", "off"])
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="planner-only regime sweep")
    s.add_argument("--config")
    s.add_argument("--param", required=True, choices=["beta", "gamma", "t"])
    s.add_argument("--grid", required=True, help="comma-separated values")
    s.add_argument("--seed", type=int)
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to average")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("diag", help="convergence-bound trace on the convex model")
    d.add_argument("--config")
    d.add_argument("--bounds", action="store_true", required=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.set_defaults(func=cmd_diag)

    g = sub.add_parser("train-gcn", help="label realizations by enumeration and train the scorer")
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--s", type=int, default=3)
    g.add_argument("--realizations", type=int, default=200)
    g.add_argument("--link-prob", type=float, default=0.3)
    g.add_argument("--epochs", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="gcn_weights.bin")
    g.add_argument("--save-realizations", metavar="DIR")
    g.set_defaults(func=cmd_train_gcn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except D2DFLError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
