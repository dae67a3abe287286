"""Render the four sweep figures from an aggregate.csv.

One figure per metric (throughput, prevented-unsafe, budget overrides,
autonomy index), offered load on the x-axis, one line per system with a one
standard deviation shaded band. The autonomy index spans three orders of
magnitude across systems, so its y-axis is logarithmic. The renderer is
read-only over its input and overwrites its outputs idempotently; groups
missing from the CSV are skipped with a warning so partial sweeps still plot.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

from matplotlib.figure import Figure

EXPECTED_COLUMNS = ("system", "lambda", "metric", "mean", "std", "n")


@dataclass(frozen=True)
class FigureSpec:
    metric: str
    ylabel: str
    filename: str
    log_y: bool = False


FIGURES = (
    FigureSpec("throughput", "Packets served per episode", "fig_throughput"),
    FigureSpec("prevented_unsafe", "Prevented unsafe proposals per episode",
               "fig_prevented"),
    FigureSpec("eb_blocks", "Budget overrides per episode", "fig_eb_blocks"),
    FigureSpec("aix", "Autonomy index", "fig_aix", log_y=True),
)

SYSTEM_STYLE = {
    "unconstrained": {"color": "tab:red", "marker": "o"},
    "reactive": {"color": "tab:orange", "marker": "s"},
    "proactive": {"color": "tab:green", "marker": "^"},
}


def load_aggregate(path):
    """Read aggregate.csv into {(system, load, metric): (mean, std)} plus the
    system order of appearance and the sorted loads."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in EXPECTED_COLUMNS if c not in header]
        if missing:
            raise ValueError(
                f"{path}: missing columns {missing} (header was {header})")
        table: dict[tuple[str, float, str], tuple[float, float]] = {}
        systems: list[str] = []
        lambdas: set[float] = set()
        for row in reader:
            lam = float(row["lambda"])
            table[(row["system"], lam, row["metric"])] = (
                float(row["mean"]), float(row["std"]))
            if row["system"] not in systems:
                systems.append(row["system"])
            lambdas.add(lam)
    return table, systems, sorted(lambdas)


def build_figure(table, systems, lambdas, spec: FigureSpec) -> Figure:
    fig = Figure(figsize=(5.2, 3.6))
    ax = fig.subplots()
    for system in systems:
        xs, means, stds = [], [], []
        for lam in lambdas:
            entry = table.get((system, lam, spec.metric))
            if entry is None:
                warnings.warn(
                    f"no {spec.metric} row for {system} at load {lam:g}; "
                    "skipping point")
                continue
            xs.append(lam)
            means.append(entry[0])
            stds.append(entry[1])
        if not xs:
            warnings.warn(f"system {system} has no {spec.metric} data at all")
            continue
        style = SYSTEM_STYLE.get(system, {})
        ax.plot(xs, means, label=system, **style)
        lower = [m - s for m, s in zip(means, stds)]
        upper = [m + s for m, s in zip(means, stds)]
        if spec.log_y:
            # Bands must stay positive on a log axis.
            lower = [max(lo, m * 0.05, 1e-12) for lo, m in zip(lower, means)]
        ax.fill_between(xs, lower, upper, alpha=0.2,
                        color=style.get("color"))
    if spec.log_y:
        ax.set_yscale("log")
    ax.set_xlabel("Offered load (arrival probability)")
    ax.set_ylabel(spec.ylabel)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def render_all(aggregate_csv, out_dir, fmt: str = "png") -> list[Path]:
    """Write one image per metric into out_dir; returns the paths in the
    fixed figure order."""
    if fmt not in ("png", "svg"):
        raise ValueError(f"unsupported format {fmt!r}, use png or svg")
    table, systems, lambdas = load_aggregate(aggregate_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for spec in FIGURES:
        fig = build_figure(table, systems, lambdas, spec)
        path = out / f"{spec.filename}.{fmt}"
        fig.savefig(path, dpi=150)
        written.append(path)
    return written
