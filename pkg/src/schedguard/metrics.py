"""Per-slot recording, per-episode metrics and cross-seed aggregation.

Four headline numbers per episode: packets served, unsafe proposals
intercepted before execution, budget-forced conservative overrides, and the
autonomy index (fraction of slots whose executed set equals the proposal
exactly). Executed violations are tallied separately and must stay at zero
for any safety-aware system.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

METRIC_NAMES = ("throughput", "prevented_unsafe", "eb_blocks", "aix", "violations")

CELLS_HEADER = "system,lambda,seed,episode,throughput,prevented_unsafe,eb_blocks,aix,violations"
AGGREGATE_HEADER = "system,lambda,metric,mean,std,n"


@dataclass(frozen=True)
class SlotRecord:
    slot_index: int
    proposal_size: int
    was_unsafe_proposal: bool
    eb_blocked: bool
    executed_size: int
    served: int
    violation: bool
    beta_after: Optional[float]
    # Set-equality of executed vs proposal, captured at decision time; sizes
    # alone cannot distinguish a substituted singleton from the proposed one.
    unmodified: bool


@dataclass(frozen=True)
class EpisodeMetrics:
    throughput: int
    prevented_unsafe: int
    eb_blocks: int
    aix: float
    violations: int
    n_decisions: int


@dataclass(frozen=True)
class CellResult:
    """One evaluation episode keyed by its sweep coordinates."""

    system: str
    lam: float
    seed: int
    episode: int
    metrics: EpisodeMetrics


@dataclass(frozen=True)
class AggregateStats:
    system: str
    lam: float
    means: dict[str, float]
    stds: dict[str, float]
    n: int


def finalize_episode(records: Sequence[SlotRecord]) -> EpisodeMetrics:
    """Reduce one episode's slot records. Unsafe proposals count once per
    slot regardless of how many conflicts they contained."""
    if not records:
        raise ValueError("cannot finalize an empty episode")
    n = len(records)
    return EpisodeMetrics(
        throughput=sum(r.served for r in records),
        prevented_unsafe=sum(1 for r in records if r.was_unsafe_proposal),
        eb_blocks=sum(1 for r in records if r.eb_blocked),
        aix=sum(1 for r in records if r.unmodified) / n,
        violations=sum(1 for r in records if r.violation),
        n_decisions=n,
    )


def aggregate(cells: Sequence[CellResult]) -> list[AggregateStats]:
    """Mean and sample standard deviation (ddof=1, zero for singleton groups)
    of every metric, grouped by (system, arrival probability)."""
    groups: dict[tuple[str, float], list[EpisodeMetrics]] = {}
    for c in cells:
        groups.setdefault((c.system, c.lam), []).append(c.metrics)
    stats = []
    for (system, lam) in sorted(groups):
        ms = groups[(system, lam)]
        means, stds = {}, {}
        for name in METRIC_NAMES:
            vals = np.array([getattr(m, name) for m in ms], dtype=np.float64)
            means[name] = float(vals.mean())
            stds[name] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        stats.append(AggregateStats(system, lam, means, stds, len(ms)))
    return stats


def _fmt(x: float) -> str:
    # 6 significant digits, dot decimal separator, locale-independent.
    return format(float(x), ".6g")


def emit_csv(cells: Sequence[CellResult], stats: Sequence[AggregateStats],
             out_dir) -> tuple[Path, Path]:
    """Write ``cells.csv`` (one row per evaluation episode) and
    ``aggregate.csv`` (one row per group and metric) with deterministic row
    order, so identical inputs reproduce identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cell_lines = [CELLS_HEADER]
    for c in sorted(cells, key=lambda c: (c.system, c.lam, c.seed, c.episode)):
        m = c.metrics
        cell_lines.append(
            f"{c.system},{_fmt(c.lam)},{c.seed},{c.episode},{m.throughput},"
            f"{m.prevented_unsafe},{m.eb_blocks},{_fmt(m.aix)},{m.violations}")

    agg_lines = [AGGREGATE_HEADER]
    for s in sorted(stats, key=lambda s: (s.system, s.lam)):
        for name in METRIC_NAMES:
            agg_lines.append(
                f"{s.system},{_fmt(s.lam)},{name},{_fmt(s.means[name])},"
                f"{_fmt(s.stds[name])},{s.n}")

    cells_path = out / "cells.csv"
    agg_path = out / "aggregate.csv"
    for path, lines in ((cells_path, cell_lines), (agg_path, agg_lines)):
        try:
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            raise OSError(f"failed writing {path}: {e}") from e
    return cells_path, agg_path
