"""Command line wrapper: render --in aggregate.csv --out DIR [--format png|svg]."""

from __future__ import annotations

import argparse
import sys

from .render import render_all


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render",
        description="render sweep figures from an aggregate.csv")
    parser.add_argument("--in", dest="input", required=True, metavar="CSV",
                        help="aggregate.csv produced by a sweep")
    parser.add_argument("--out", required=True, metavar="DIR",
                        help="directory for the four figure files")
    parser.add_argument("--format", choices=("png", "svg"), default="png")
    args = parser.parse_args(argv)
    try:
        paths = render_all(args.input, args.out, args.format)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for p in paths:
        print(f"wrote {p}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
