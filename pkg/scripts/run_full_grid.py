#!/usr/bin/env python3
"""Run the full default sweep (3 systems x 4 loads x 3 seeds x 5 episodes,
greedy agent) and print a per-group summary of the emitted aggregate.csv.

Usage: python scripts/run_full_grid.py [--out DIR] [--agent KIND]
"""

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from schedguard.harness import ExperimentConfig, run_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    parser.add_argument("--agent", default="greedy",
                        choices=("greedy", "random", "ppo"))
    args = parser.parse_args()

    config = ExperimentConfig(agent_kind=args.agent)
    t0 = time.perf_counter()
    (cells_path, agg_path), failures = run_experiment(config, args.out,
                                                      quiet=False)
    print(f"\nsweep finished in {time.perf_counter() - t0:.1f}s")
    for f in failures:
        print(f"FAILED cell {f.system} lambda={f.lam} seed={f.seed}: {f.error}",
              file=sys.stderr)

    rows = list(csv.DictReader(open(agg_path)))
    print(f"\n{'system':<14} {'lambda':>6} {'metric':<17} {'mean':>10} {'std':>9}")
    for r in rows:
        print(f"{r['system']:<14} {r['lambda']:>6} {r['metric']:<17} "
              f"{float(r['mean']):>10.3f} {float(r['std']):>9.3f}")
    print(f"\nwrote {cells_path} and {agg_path}")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
