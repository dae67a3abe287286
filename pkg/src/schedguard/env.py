"""Discrete-time wireless uplink environment.

N devices hold packet queues fed by per-slot Bernoulli arrivals and up to M
of them transmit in each slot. Channel gains are drawn once per episode and
induce a conflict graph; a schedule is safe exactly when it is an independent
set of that graph. The graph, not a per-slot SINR draw, is the runtime ground
truth for safety, so the measured conflict density of an episode is well
defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .seeding import STREAMS, substream

# A schedule is an ordered, duplicate-free tuple of device indices.
Schedule = tuple[int, ...]

TOPOLOGY_MODES = ("random-graph", "physical")

# Devices closer than this to the receiver get their pathloss clamped so a
# single lucky placement cannot produce a near-infinite gain.
_MIN_DISTANCE = 0.05


def as_schedule(members: Iterable[int], n_devices: Optional[int] = None) -> Schedule:
    """Normalize device indices into a Schedule, preserving order.

    Duplicates are rejected; out-of-range indices are rejected when
    ``n_devices`` is given.
    """
    sched = tuple(int(i) for i in members)
    if len(set(sched)) != len(sched):
        raise ValueError(f"schedule has duplicate devices: {sched}")
    if n_devices is not None:
        bad = [i for i in sched if i < 0 or i >= n_devices]
        if bad:
            raise ValueError(f"device indices out of range [0, {n_devices}): {bad}")
    return sched


@dataclass(frozen=True)
class EnvConfig:
    """Static description of one uplink scenario.

    ``n_channels`` caps how many devices may transmit concurrently; it is a
    cardinality limit only, channel-to-device assignment is not modeled.
    ``seed`` doubles as the master seed of any experiment built on top of
    this config.
    """

    n_devices: int = 30
    n_channels: int = 4
    arrival_prob: float = 1.0
    slots_per_episode: int = 1000
    queue_cap: int = 50
    sinr_threshold: float = 1.0
    noise_power: float = 1.0
    topology_mode: str = "random-graph"
    target_density: float = 0.34
    pathloss_exponent: float = 3.0
    drop_on_violation: bool = False
    seed: int = 7

    def __post_init__(self):
        if self.n_channels < 1 or self.n_channels > self.n_devices:
            raise ValueError("n_channels must be in [1, n_devices]")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival_prob must be in [0, 1]")
        if not 0.0 <= self.target_density <= 1.0:
            raise ValueError("target_density must be in [0, 1]")
        if self.sinr_threshold <= 0.0 or self.noise_power <= 0.0:
            raise ValueError("sinr_threshold and noise_power must be positive")
        if self.topology_mode not in TOPOLOGY_MODES:
            raise ValueError(f"topology_mode must be one of {TOPOLOGY_MODES}")
        if self.slots_per_episode < 1 or self.queue_cap < 1:
            raise ValueError("slots_per_episode and queue_cap must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True, eq=False)
class ChannelState:
    """Per-device linear power gains (pathloss times fading) plus noise power.

    Gains are fixed for the duration of one episode.
    """

    gains: np.ndarray
    noise_power: float

    def __post_init__(self):
        if np.any(self.gains <= 0.0):
            raise ValueError("channel gains must be positive")


@dataclass(frozen=True, eq=False)
class ConflictGraph:
    """Undirected graph over devices; edges mark pairs that must not transmit
    together. ``adjacency`` mirrors ``edges`` and is precomputed because
    membership tests dominate the per-slot safety checks."""

    n_vertices: int
    edges: frozenset[tuple[int, int]]
    adjacency: tuple[frozenset[int], ...]

    @classmethod
    def from_edges(cls, n_vertices: int, edges: Iterable[tuple[int, int]]) -> "ConflictGraph":
        canon = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop on vertex {a}")
            if not (0 <= a < n_vertices and 0 <= b < n_vertices):
                raise ValueError(f"edge ({a},{b}) out of range")
            canon.add((min(a, b), max(a, b)))
        nbrs = [set() for _ in range(n_vertices)]
        for a, b in canon:
            nbrs[a].add(b)
            nbrs[b].add(a)
        return cls(n_vertices, frozenset(canon),
                   tuple(frozenset(s) for s in nbrs))

    def degrees(self) -> np.ndarray:
        return np.array([len(s) for s in self.adjacency], dtype=np.int64)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def build_conflict_graph(config: EnvConfig, channel: Optional[ChannelState],
                         rng: np.random.Generator) -> ConflictGraph:
    """Draw the episode's conflict graph.

    random-graph mode: every unordered pair is an edge independently with
    probability ``target_density`` (the channel argument is unused).
    physical mode: pair (i, j) conflicts when either device would fall below
    the SINR threshold with only the other one interfering, i.e.
    h_i / (h_j + noise) < threshold or vice versa.
    """
    n = config.n_devices
    if n < 2:
        raise ValueError("conflict graph needs at least 2 devices")
    edges: list[tuple[int, int]] = []
    if config.topology_mode == "random-graph":
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        draws = rng.random(len(pairs))
        edges = [p for p, u in zip(pairs, draws) if u < config.target_density]
    else:
        if channel is None:
            raise ValueError("physical mode needs channel gains")
        h = channel.gains
        s2 = channel.noise_power
        gmin = config.sinr_threshold
        for i in range(n):
            for j in range(i + 1, n):
                if h[i] / (h[j] + s2) < gmin or h[j] / (h[i] + s2) < gmin:
                    edges.append((i, j))
    return ConflictGraph.from_edges(n, edges)


def measure_density(graph: ConflictGraph) -> float:
    """Edge count over the number of possible pairs."""
    n = graph.n_vertices
    if n < 2:
        raise ValueError("density needs at least 2 vertices")
    return len(graph.edges) / (n * (n - 1) / 2)


def compute_sinr(device: int, schedule: Schedule, channel: ChannelState) -> float:
    """SINR of ``device`` when every member of ``schedule`` transmits at once:
    own gain over the sum of the other members' gains plus noise."""
    if device not in schedule:
        raise ValueError(f"device {device} not in schedule {schedule}")
    interference = sum(channel.gains[j] for j in schedule if j != device)
    return float(channel.gains[device] / (interference + channel.noise_power))


def is_safe_set(schedule: Schedule, graph: ConflictGraph) -> bool:
    """True when no conflict edge has both endpoints in the schedule.

    Empty and singleton schedules are vacuously safe.
    """
    members = as_schedule(schedule, graph.n_vertices)
    for k, i in enumerate(members):
        nbrs = graph.adjacency[i]
        for j in members[k + 1:]:
            if j in nbrs:
                return False
    return True


@dataclass(eq=False)
class EnvState:
    """Everything one episode needs: queues, slot cursor, channel, graph and
    the arrivals stream. Self-contained, so independent episodes can run
    concurrently without shared state."""

    config: EnvConfig
    queues: np.ndarray
    slot_index: int
    channel: ChannelState
    graph: ConflictGraph
    rng: np.random.Generator


@dataclass(frozen=True)
class StepOutcome:
    served: int
    served_devices: Schedule
    violation: bool
    arrivals: int


def reset(config: EnvConfig, episode_seed: int) -> EnvState:
    """Fresh episode state: empty queues, gains and graph drawn from streams
    derived from ``episode_seed``. Identical seeds give identical state."""
    fading_rng = substream(episode_seed, STREAMS["fading"])
    topo_rng = substream(episode_seed, STREAMS["topology"])
    arrivals_rng = substream(episode_seed, STREAMS["arrivals"])

    n = config.n_devices
    if config.topology_mode == "physical":
        # Uniform placement in the unit disk around the receiver; gains are
        # pathloss times unit-mean exponential fading power.
        radii = np.sqrt(fading_rng.random(n))
        radii = np.maximum(radii, _MIN_DISTANCE)
        fading = fading_rng.exponential(1.0, size=n)
        gains = radii ** (-config.pathloss_exponent) * fading
    else:
        gains = fading_rng.exponential(1.0, size=n)
    channel = ChannelState(gains=gains, noise_power=config.noise_power)
    graph = build_conflict_graph(config, channel, topo_rng)
    return EnvState(
        config=config,
        queues=np.zeros(n, dtype=np.int64),
        slot_index=0,
        channel=channel,
        graph=graph,
        rng=arrivals_rng,
    )


def env_step(state: EnvState, executed: Schedule) -> StepOutcome:
    """Advance one slot: serve the executed devices, then admit arrivals.

    A device serves one packet when it is in the executed set and backlogged;
    with ``drop_on_violation`` it must additionally have no executed neighbor
    (a conflicting transmission fails and the packet stays queued). The
    violation flag reports whether the devices that actually transmitted (the
    backlogged members of the executed set) formed a dependent set. Arrivals
    are drawn for every device each slot so the stream position depends only
    on the slot count.
    """
    cfg = state.config
    executed = as_schedule(executed, cfg.n_devices)
    if len(executed) > cfg.n_channels:
        raise ValueError(
            f"schedule of size {len(executed)} exceeds {cfg.n_channels} channels")
    if state.slot_index >= cfg.slots_per_episode:
        raise ValueError("episode already finished")

    transmitters = tuple(i for i in executed if state.queues[i] > 0)
    violation = not is_safe_set(transmitters, state.graph)
    if cfg.drop_on_violation and violation:
        tx = set(transmitters)
        served_devices = tuple(i for i in transmitters
                               if not (state.graph.adjacency[i] & tx))
    else:
        served_devices = transmitters
    for i in served_devices:
        state.queues[i] -= 1

    draws = state.rng.random(cfg.n_devices) < cfg.arrival_prob
    admitted = draws & (state.queues < cfg.queue_cap)
    state.queues[admitted] += 1
    state.slot_index += 1
    return StepOutcome(
        served=len(served_devices),
        served_devices=served_devices,
        violation=violation,
        arrivals=int(admitted.sum()),
    )
