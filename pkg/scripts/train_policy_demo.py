#!/usr/bin/env python3
"""Train the learner inside one pipeline cell, checkpoint it, and compare
evaluation throughput against the fresh initialization.

Usage: python scripts/train_policy_demo.py [--system NAME] [--updates N]
       [--arrival P] [--seed S] [--checkpoint PATH]
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from schedguard.agents import init_policy, load_params, save_params
from schedguard.harness import (Agent, ExperimentConfig, run_episode,
                                train_policy)
from schedguard.seeding import cell_stream, episode_seed


def evaluate(config, system, seed, params, episodes=5):
    agent = Agent(kind="ppo",
                  rng=cell_stream(config.env.seed, system,
                                  config.env.arrival_prob, seed, "policy-eval"),
                  params=params)
    total = 0
    for ep in range(episodes):
        es = episode_seed(config.env.seed, system, config.env.arrival_prob,
                          seed, "eval", ep)
        metrics, _ = run_episode(config, system, agent, es)
        total += metrics.throughput
    return total / episodes


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--system", default="unconstrained")
    parser.add_argument("--updates", type=int, default=60)
    parser.add_argument("--arrival", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--checkpoint", default="policy_checkpoint.txt")
    args = parser.parse_args()

    config = ExperimentConfig(agent_kind="ppo", train_updates=args.updates)
    config = replace(config, env=replace(config.env, arrival_prob=args.arrival))

    fresh = train_policy(replace(config, train_updates=0), args.system, args.seed)
    base = evaluate(config, args.system, args.seed, fresh)
    print(f"untrained policy: mean throughput {base:.1f}")

    t0 = time.perf_counter()
    params = train_policy(config, args.system, args.seed)
    print(f"trained {args.updates} updates in {time.perf_counter() - t0:.1f}s")

    save_params(args.checkpoint, params, seed=args.seed, updates=args.updates)
    reloaded, header = load_params(args.checkpoint)
    trained = evaluate(config, args.system, args.seed, reloaded)
    print(f"trained policy:   mean throughput {trained:.1f} "
          f"({(trained / base - 1) * 100:+.1f}%)")
    print(f"checkpoint written to {args.checkpoint} "
          f"(updates={header['updates']})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
