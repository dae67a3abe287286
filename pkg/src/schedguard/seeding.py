"""Deterministic stream derivation.

One master seed fans out into named sub-streams through fixed integer keys,
so adding a new random consumer never shifts the draws seen by an existing
one, and every (system, load, seed, episode) cell gets its own streams that
do not depend on the order in which cells are executed.
"""

from __future__ import annotations

import numpy as np

# Fixed registries: appending new names is safe, renumbering is not.
STREAMS = {
    "topology": 0,
    "fading": 1,
    "arrivals": 2,
    "policy-init": 3,
    "policy-sample": 4,
    "policy-update": 5,
    "policy-eval": 6,
}

SYSTEM_KEYS = {"unconstrained": 0, "reactive": 1, "proactive": 2}

PHASE_KEYS = {"train": 0, "eval": 1}


def substream(*key: int) -> np.random.Generator:
    """Generator keyed by a tuple of non-negative integers."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def load_key(arrival_prob: float) -> int:
    # Microprobability resolution keeps distinct sweep points distinct.
    return int(round(arrival_prob * 1_000_000))


def cell_stream(master_seed: int, system: str, arrival_prob: float, seed: int,
                name: str) -> np.random.Generator:
    """Named stream private to one (system, load, seed) experiment cell."""
    return substream(master_seed, SYSTEM_KEYS[system], load_key(arrival_prob),
                     seed, STREAMS[name])


def episode_seed(master_seed: int, system: str, arrival_prob: float, seed: int,
                 phase: str, index: int) -> int:
    """Stable per-episode environment seed for a cell, split by phase."""
    ss = np.random.SeedSequence((master_seed, SYSTEM_KEYS[system],
                                 load_key(arrival_prob), seed,
                                 PHASE_KEYS[phase], index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
