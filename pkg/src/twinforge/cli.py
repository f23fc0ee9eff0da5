"""Command-line front end.

Verbs: train, evaluate, surface, tune, sweep, report. Every verb takes
--config and --out; the TWINFORGE_OUT environment variable overrides the
root that relative --out paths land under. Exit status is 0 only when every
produced row succeeded (2 for config/usage problems, 1 for failed rows).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import dqn_trainer as dqn
from . import harness
from . import mdp_env as env
from . import neural as nn
from . import twin_tuner as tuner
from .harness import ConfigError


def _resolve_out(out_arg: str | None, verb: str) -> str:
    root = os.environ.get("TWINFORGE_OUT", ".")
    if out_arg and os.path.isabs(out_arg):
        return out_arg
    return os.path.join(root, out_arg or f"twinforge_{verb}")


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.parse_config(args.config)
    run = cfg.run
    if getattr(args, "seeds", None):
        run = replace(run, seeds=tuple(int(s) for s in args.seeds.split(",")))
    if getattr(args, "workers", None):
        run = replace(run, workers=args.workers)
    if getattr(args, "undiscounted_td", False):
        run = replace(run, undiscounted_td=True)
    if getattr(args, "noise_counts_physical", False):
        run = replace(run, noise_counts_physical=True)
    return replace(cfg, run=run)


def _exit_status(rows) -> int:
    return 0 if all(r.status == "ok" for r in rows) else 1


def cmd_train(args) -> int:
    cfg = _load_config(args)
    cfg = replace(cfg, run=replace(cfg.run, schemes=(cfg.scheme.name,),
                                   sweep_param="none", sweep_values=()))
    out = _resolve_out(args.out, "train")
    result = harness.sweep(cfg, surface_path=args.surface)
    harness.emit_report(cfg, result, out)
    for seed in cfg.run.seeds:
        tr = result.by_cell.get((None, cfg.scheme.name, seed))
        if tr is not None:
            nn.save_network(tr.policy, os.path.join(out, f"policy_seed{seed}.net"))
    for row in result.rows:
        print(f"{row.scheme} seed={row.seed} status={row.status} "
              f"eval_sum_rate={row.mean_sum_rate}")
    print(f"wrote {out}")
    return _exit_status(result.rows)


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    policy_net = nn.load_network(args.snapshot)
    if policy_net.layer_dims[0] != cfg.env.state_dim:
        print(f"snapshot expects input dim {policy_net.layer_dims[0]}, "
              f"config env has {cfg.env.state_dim}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg.run.seeds[0]
    users = dqn.experiment_users(cfg.env, seed)
    rate = env.evaluate_physical(cfg.env, dqn.greedy_policy(policy_net),
                                 cfg.train.eval_episodes,
                                 np.random.default_rng(0), users=users)
    print(f"seed={seed} eval_sum_rate={rate!r}")
    if args.out:
        out = _resolve_out(args.out, "evaluate")
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "evaluation.csv"), "w") as f:
            f.write("seed,eval_sum_rate\n")
            f.write(f"{seed},{rate!r}\n")
    return 0


def cmd_surface(args) -> int:
    cfg = _load_config(args)
    out = _resolve_out(args.out, "surface")
    os.makedirs(out, exist_ok=True)
    surf = harness.ensure_surface(cfg)
    path = os.path.join(out, "surface.csv")
    tuner.save_surface(surf, path)
    n_invalid = int(np.sum(surf.seeds == 0))
    print(f"wrote {path} ({surf.mean_rate.size} cells, {n_invalid} invalid)")
    return 0 if n_invalid == 0 else 1


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    out = _resolve_out(args.out, "tune")
    os.makedirs(out, exist_ok=True)
    surf = harness.ensure_surface(cfg, surface_path=args.surface)
    if args.surface is None:
        tuner.save_surface(surf, os.path.join(out, "surface.csv"))
    g, plan = harness.fit_tuner(cfg, cfg.econ, surf)
    estimate = tuner.estimate_plan_utility(cfg.econ, surf, plan)
    payload = {
        "physical_k": plan.physical_k,
        "twin_noise_delta": plan.twin_noise_delta,
        "total_uavs_m": plan.total_uavs_m,
        "estimated_utility": estimate,
    }
    with open(os.path.join(out, "plan.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    nn.save_network(g, os.path.join(out, "tuner.net"))
    print(f"selected plan: k={plan.physical_k} delta={plan.twin_noise_delta!r} "
          f"estimated_utility={estimate!r}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _resolve_out(args.out, "sweep")
    result = harness.sweep(cfg, surface_path=args.surface)
    harness.emit_report(cfg, result, out)
    n_failed = sum(r.status != "ok" for r in result.rows)
    print(f"wrote {out}: {len(result.rows)} rows, {n_failed} failed")
    return _exit_status(result.rows)


def cmd_report(args) -> int:
    src = args.source
    out = _resolve_out(args.out, "report") if args.out else src
    os.makedirs(out, exist_ok=True)
    upath = os.path.join(src, "utility.csv")
    cpath = os.path.join(src, "convergence.csv")
    wrote = []
    if os.path.exists(upath):
        rows = harness.load_utility_csv(upath)
        if rows and any(r.sweep_value is not None for r in rows):
            dest = os.path.join(out, "utility_vs_sweep.svg")
            harness._chart_utility(rows, rows[0].sweep_param, dest)
            wrote.append(dest)
    if os.path.exists(cpath):
        conv = harness.load_convergence_csv(cpath)
        if conv:
            dest = os.path.join(out, "convergence.svg")
            harness._chart_convergence(conv, dest)
            wrote.append(dest)
    if not wrote:
        print(f"nothing to render from {src}", file=sys.stderr)
        return 2
    print("wrote " + ", ".join(wrote))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="twinforge",
        description="Digital-twin-assisted DQN training for multi-UAV networks.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, seeds=True):
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--out", help="output directory (under TWINFORGE_OUT if relative)")
        if seeds:
            sp.add_argument("--seeds", help="comma-separated seed override")
        sp.add_argument("--workers", type=int, help="parallel training workers")
        sp.add_argument("--undiscounted-td", action="store_true",
                        help="undiscounted TD target (no gamma on the bootstrap)")
        sp.add_argument("--noise-counts-physical", action="store_true",
                        help="aggregate reward noise variance K*delta instead of (M-K)*delta")

    sp = sub.add_parser("train", help="train the configured scheme per seed")
    common(sp)
    sp.add_argument("--surface", help="surface.csv for tuned_dt")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a policy snapshot, all physical")
    common(sp, seeds=False)
    sp.add_argument("--snapshot", required=True, help="policy .net file")
    sp.add_argument("--seed", type=int, help="experiment seed (user layout)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("surface", help="train the (delta, k) performance surface")
    common(sp)
    sp.set_defaults(func=cmd_surface)

    sp = sub.add_parser("tune", help="fit the fidelity tuner and select a plan")
    common(sp)
    sp.add_argument("--surface", help="reuse a persisted surface.csv")
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("sweep", help="full scheme x seed x sweep-value grid")
    common(sp)
    sp.add_argument("--surface", help="reuse a persisted surface.csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="re-render charts from emitted CSVs")
    sp.add_argument("source", help="directory containing utility.csv/convergence.csv")
    sp.add_argument("--out", help="chart output directory (default: source)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
