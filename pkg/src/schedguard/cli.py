"""Command-line entry point.

Subcommands:
  run        full sweep, CSV outputs; built-in defaults reproduce the tight
             budget setup (30 devices, 4 channels, density 0.34, budget 8/6,
             risky cost 4) with the greedy agent
  episode    single-cell debug run with an optional per-slot trace dump
  calibrate  report measured conflict density over sampled topologies
  gradcheck  verify the analytic policy gradient against finite differences
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import agents, harness
from .seeding import episode_seed


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", default=None,
                   help="flat key = value config file (flags override it)")
    p.add_argument("--systems", metavar="LIST", default=None,
                   help="comma-separated subset of unconstrained,reactive,proactive")
    p.add_argument("--lambdas", metavar="LIST", default=None,
                   help="comma-separated arrival probabilities")
    p.add_argument("--seeds", metavar="LIST", default=None,
                   help="comma-separated integer seeds")
    p.add_argument("--slots", metavar="N", type=int, default=None,
                   help="slots per episode")
    p.add_argument("--agent", metavar="KIND", default=None,
                   choices=harness.AGENT_KINDS, help="ppo, greedy or random")


def _build_config(args) -> harness.ExperimentConfig:
    overrides = {"exp": {}, "env": {}, "budget": {}, "ppo": {}}
    if args.config:
        overrides = harness.parse_config_file(args.config)
    if getattr(args, "systems", None):
        overrides["exp"]["systems"] = tuple(
            s.strip() for s in args.systems.split(",") if s.strip())
    if getattr(args, "lambdas", None):
        overrides["exp"]["lambdas"] = tuple(
            float(v) for v in args.lambdas.split(",") if v.strip())
    if getattr(args, "seeds", None):
        overrides["exp"]["seeds"] = tuple(
            int(v) for v in args.seeds.split(",") if v.strip())
    if getattr(args, "slots", None) is not None:
        overrides["env"]["slots_per_episode"] = args.slots
    if getattr(args, "agent", None):
        overrides["exp"]["agent_kind"] = args.agent
    return harness.build_config(overrides)


def _cmd_run(args) -> int:
    config = _build_config(args)
    (cells_path, agg_path), failures = harness.run_experiment(
        config, args.out, quiet=args.quiet)
    for f in failures:
        print(f"cell failed: {f.system} lambda={f.lam:g} seed={f.seed}: {f.error}",
              file=sys.stderr)
    if not args.quiet or failures:
        print(f"wrote {cells_path} and {agg_path}")
    return 1 if failures else 0


def _cmd_episode(args) -> int:
    config = _build_config(args)
    config = replace(config, env=replace(config.env, arrival_prob=args.arrival))
    if args.system not in harness.SYSTEMS:
        raise SystemExit(f"unknown system {args.system!r}")
    master = config.env.seed
    es = episode_seed(master, args.system, args.arrival, args.seed, "eval",
                      args.episode)
    params = None
    if config.agent_kind == "ppo":
        params = harness.train_policy(
            replace(config, env=replace(config.env, arrival_prob=args.arrival)),
            args.system, args.seed)
    agent = harness.Agent(
        kind=config.agent_kind,
        rng=harness.cell_stream(master, args.system, args.arrival, args.seed,
                                "policy-eval"),
        params=params)
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        m, _ = harness.run_episode(config, args.system, agent, es, trace=trace)
    finally:
        if trace is not None:
            trace.close()
    print(f"system={args.system} lambda={args.arrival:g} seed={args.seed} "
          f"episode={args.episode}")
    print(f"throughput={m.throughput} prevented_unsafe={m.prevented_unsafe} "
          f"eb_blocks={m.eb_blocks} aix={m.aix:.6g} violations={m.violations}")
    if args.trace:
        print(f"trace written to {args.trace}")
    return 0


def _cmd_calibrate(args) -> int:
    mean = harness.calibrate_density(args.devices, args.density, args.samples,
                                     args.seed)
    print(f"measured density over {args.samples} topologies "
          f"(n={args.devices}, target={args.density:g}): {mean:.6g}")
    return 0


def _cmd_gradcheck(args) -> int:
    err = agents.gradient_check(h=args.step)
    print(f"max relative gradient error: {err:.3e}")
    if err < 1e-4:
        return 0
    print("gradient check failed (threshold 1e-4)", file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schedguard",
        description="safety-gated uplink scheduling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full experiment sweep")
    _add_override_flags(p_run)
    p_run.add_argument("--out", metavar="DIR", default="results",
                       help="output directory for cells.csv and aggregate.csv")
    p_run.add_argument("--quiet", action="store_true",
                       help="suppress per-cell progress lines")
    p_run.set_defaults(func=_cmd_run)

    p_ep = sub.add_parser("episode", help="run one episode with a trace dump")
    _add_override_flags(p_ep)
    p_ep.add_argument("--system", default="proactive",
                      help="pipeline to run (default proactive)")
    p_ep.add_argument("--arrival", type=float, default=1.0,
                      help="arrival probability for this episode")
    p_ep.add_argument("--seed", type=int, default=11)
    p_ep.add_argument("--episode", type=int, default=0,
                      help="episode index within the cell")
    p_ep.add_argument("--trace", metavar="PATH", default=None,
                      help="write per-slot JSON lines to this file")
    p_ep.set_defaults(func=_cmd_episode)

    p_cal = sub.add_parser("calibrate",
                           help="measure conflict density over sampled graphs")
    p_cal.add_argument("--devices", type=int, default=30)
    p_cal.add_argument("--density", type=float, default=0.34)
    p_cal.add_argument("--samples", type=int, default=1000)
    p_cal.add_argument("--seed", type=int, default=7)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_gc = sub.add_parser("gradcheck",
                          help="finite-difference check of the policy gradient")
    p_gc.add_argument("--step", type=float, default=1e-5,
                      help="finite-difference step size")
    p_gc.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
