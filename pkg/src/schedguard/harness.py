"""Experiment orchestration.

Wires the per-slot pipeline for each system, runs training and evaluation
phases, and sweeps the (system, arrival probability, seed) grid. Every cell
derives its random streams from the master seed plus its own coordinates, so
cells are independent of execution order and a repeated run reproduces the
output files byte for byte.

Pipelines per system:
  unconstrained  proposal executed as-is, no safety processing
  reactive       proposal projected onto a certified subset, then executed
  proactive      proposal verified, then budget-gated, then executed
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import agents
from .agents import (PolicyParams, PPOConfig, Transition, build_batch,
                     build_observation, gae_advantages, policy_forward,
                     ppo_update, schedule_log_prob)
from .env import EnvConfig, EnvState, Schedule, env_step, measure_density, reset
from .env import build_conflict_graph
from .metrics import (AggregateStats, CellResult, EpisodeMetrics, SlotRecord,
                      aggregate, emit_csv, finalize_episode)
from .safety import (BudgetConfig, BudgetState, SlotDecision, gate,
                     verify_schedule)
from .seeding import cell_stream, episode_seed, substream, STREAMS

SYSTEMS = ("unconstrained", "reactive", "proactive")
AGENT_KINDS = ("ppo", "greedy", "random")

DEFAULT_LAMBDAS = (0.2, 0.4, 0.7, 1.0)
DEFAULT_SEEDS = (11, 23, 47)


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    systems: tuple[str, ...] = SYSTEMS
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    eval_episodes: int = 5
    train_updates: int = 60
    agent_kind: str = "greedy"

    def __post_init__(self):
        if not self.lambdas or any(not 0.0 <= l <= 1.0 for l in self.lambdas):
            raise ValueError("lambdas must be nonempty values in [0, 1]")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ValueError("seeds must be nonempty and distinct")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        bad = [s for s in self.systems if s not in SYSTEMS]
        if bad or not self.systems:
            raise ValueError(f"unknown systems {bad}; choose from {SYSTEMS}")
        if self.agent_kind not in AGENT_KINDS:
            raise ValueError(f"agent_kind must be one of {AGENT_KINDS}")
        if self.eval_episodes < 1 or self.train_updates < 0:
            raise ValueError("eval_episodes >= 1 and train_updates >= 0 required")


@dataclass
class Agent:
    """Proposal source for one cell: a policy, the queue-greedy rule or the
    random baseline, together with its private sampling stream."""

    kind: str
    rng: np.random.Generator
    params: Optional[PolicyParams] = None

    def propose(self, obs: np.ndarray, n_channels: int) -> tuple[Schedule, Optional[float]]:
        if self.kind == "ppo":
            return agents.propose(self.params, obs, n_channels, self.rng)
        if self.kind == "greedy":
            return agents.baseline_unconstrained(obs, n_channels, self.rng), None
        return agents.random_proposal(obs, n_channels, self.rng), None


def run_slot(system: str, agent: Agent, env_state: EnvState,
             budget_state: BudgetState, budget_config: BudgetConfig,
             obs: Optional[np.ndarray] = None):
    """One slot of one system's pipeline. Returns the decision record, the
    environment outcome and the post-slot budget (unchanged for systems
    without a budget)."""
    if obs is None:
        beta = budget_state.beta if system == "proactive" else None
        obs = agents.observe(env_state, beta, budget_config.beta_max)
    proposal, _ = agent.propose(obs, env_state.config.n_channels)
    queues = env_state.queues
    if system == "unconstrained":
        decision = SlotDecision(proposal=proposal, certificate=None,
                                eb_blocked=False, executed=proposal,
                                action_class=None, cost_charged=0.0,
                                recover_applied=0.0, beta_after=None)
    elif system == "reactive":
        cert = verify_schedule(proposal, env_state.graph, queues)
        decision = SlotDecision(proposal=proposal, certificate=cert,
                                eb_blocked=False, executed=cert.certified_set,
                                action_class=None, cost_charged=0.0,
                                recover_applied=0.0, beta_after=None)
    elif system == "proactive":
        cert = verify_schedule(proposal, env_state.graph, queues)
        decision = gate(cert, budget_state, budget_config, queues,
                        graph=env_state.graph)
    else:
        raise ValueError(f"unknown system {system!r}")
    outcome = env_step(env_state, decision.executed)
    new_budget = (BudgetState(decision.beta_after)
                  if decision.beta_after is not None else budget_state)
    return decision, outcome, new_budget


def _slot_record(decision: SlotDecision, outcome, slot_index: int) -> SlotRecord:
    cert = decision.certificate
    return SlotRecord(
        slot_index=slot_index,
        proposal_size=len(decision.proposal),
        was_unsafe_proposal=(cert is not None and cert.verdict == "corrected"),
        eb_blocked=decision.eb_blocked,
        executed_size=len(decision.executed),
        served=outcome.served,
        violation=outcome.violation,
        beta_after=decision.beta_after,
        unmodified=set(decision.executed) == set(decision.proposal),
    )


def run_episode(config: ExperimentConfig, system: str, agent: Agent,
                ep_seed: int, collect_transitions: bool = False,
                trace=None) -> tuple[EpisodeMetrics, list[Transition]]:
    """One full episode: reset, loop the slot pipeline, finalize metrics.

    With ``collect_transitions`` the executed set, its likelihood under the
    current policy and the value estimate are recorded per slot for training.
    ``trace`` takes a writable text stream for line-delimited slot dumps.
    Raises immediately if a safety-aware system ever executes a dependent
    set; that is an implementation bug, not a metric.
    """
    state = reset(config.env, ep_seed)
    budget = BudgetState(config.budget.beta_max)
    n = config.env.n_devices
    degree_frac = state.graph.degrees() / max(n - 1, 1)
    records: list[SlotRecord] = []
    transitions: list[Transition] = []
    for slot in range(config.env.slots_per_episode):
        budget_frac = budget.beta / config.budget.beta_max if system == "proactive" else 1.0
        obs = build_observation(state.queues, config.env.queue_cap,
                                degree_frac, budget_frac)
        decision, outcome, budget = run_slot(system, agent, state, budget,
                                             config.budget, obs=obs)
        if system != "unconstrained" and outcome.violation:
            raise RuntimeError(
                f"{system} executed a dependent set at slot {slot}; "
                "the safety layer is broken")
        records.append(_slot_record(decision, outcome, slot))
        if collect_transitions:
            _, value = policy_forward(agent.params, obs)
            lp = schedule_log_prob(agent.params, obs, decision.executed)
            transitions.append(Transition(
                obs=obs, executed=decision.executed, log_prob=lp,
                reward=float(outcome.served), value=value,
                done=(slot == config.env.slots_per_episode - 1)))
        if trace is not None:
            trace.write(_trace_line(slot, decision, outcome))
    return finalize_episode(records), transitions


def _trace_line(slot: int, decision: SlotDecision, outcome) -> str:
    cert = decision.certificate
    payload = {
        "slot": slot,
        "proposal": list(decision.proposal),
        "verdict": None if cert is None else cert.verdict,
        "certified": None if cert is None else list(cert.certified_set),
        "eb_blocked": decision.eb_blocked,
        "executed": list(decision.executed),
        "action_class": decision.action_class,
        "cost": decision.cost_charged,
        "recover": decision.recover_applied,
        "beta_after": decision.beta_after,
        "served": outcome.served,
        "violation": outcome.violation,
    }
    return json.dumps(payload, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# training

class _PipelineCursor:
    """Keeps one training rollout source alive across update rounds: the env
    and budget persist between rollouts, episodes roll over seamlessly with
    fresh per-episode seeds from the training phase stream."""

    def __init__(self, config: ExperimentConfig, system: str, seed: int):
        self.config = config
        self.system = system
        self.seed = seed
        self.episode_index = 0
        self._start_episode()

    def _start_episode(self):
        es = episode_seed(self.config.env.seed, self.system,
                          self.config.env.arrival_prob, self.seed, "train",
                          self.episode_index)
        self.state = reset(self.config.env, es)
        self.budget = BudgetState(self.config.budget.beta_max)
        n = self.config.env.n_devices
        self.degree_frac = self.state.graph.degrees() / max(n - 1, 1)
        self.episode_index += 1

    def observation(self) -> np.ndarray:
        budget_frac = (self.budget.beta / self.config.budget.beta_max
                       if self.system == "proactive" else 1.0)
        return build_observation(self.state.queues, self.config.env.queue_cap,
                                 self.degree_frac, budget_frac)

    def collect(self, agent: Agent, length: int) -> tuple[list[Transition], float]:
        transitions = []
        for _ in range(length):
            obs = self.observation()
            decision, outcome, self.budget = run_slot(
                self.system, agent, self.state, self.budget,
                self.config.budget, obs=obs)
            _, value = policy_forward(agent.params, obs)
            lp = schedule_log_prob(agent.params, obs, decision.executed)
            done = self.state.slot_index >= self.config.env.slots_per_episode
            transitions.append(Transition(
                obs=obs, executed=decision.executed, log_prob=lp,
                reward=float(outcome.served), value=value, done=done))
            if done:
                self._start_episode()
        _, last_value = policy_forward(agent.params, self.observation())
        return transitions, last_value


def train_policy(config: ExperimentConfig, system: str, seed: int) -> PolicyParams:
    """Train a policy inside the given system's pipeline, so the gradient
    sees executed (safety-processed) actions, for ``train_updates`` rollouts."""
    master = config.env.seed
    lam = config.env.arrival_prob
    params = agents.init_policy(
        config.env.n_devices, cell_stream(master, system, lam, seed, "policy-init"))
    if config.train_updates == 0:
        return params
    sample_rng = cell_stream(master, system, lam, seed, "policy-sample")
    update_rng = cell_stream(master, system, lam, seed, "policy-update")
    cursor = _PipelineCursor(config, system, seed)
    for _ in range(config.train_updates):
        agent = Agent(kind="ppo", rng=sample_rng, params=params)
        transitions, last_value = cursor.collect(agent, config.ppo.rollout_length)
        adv, ret = gae_advantages(transitions, config.ppo, last_value=last_value)
        batch = build_batch(transitions, adv, ret)
        params = ppo_update(params, batch, config.ppo, update_rng)
    return params


# ---------------------------------------------------------------------------
# sweep

@dataclass
class CellFailure:
    system: str
    lam: float
    seed: int
    error: str


def run_cell(config: ExperimentConfig, system: str, lam: float,
             seed: int) -> list[CellResult]:
    """Train (for the learning agent) and evaluate one sweep cell with
    learning frozen during evaluation."""
    cell_cfg = replace(config, env=replace(config.env, arrival_prob=lam))
    master = config.env.seed
    params = None
    if config.agent_kind == "ppo":
        params = train_policy(cell_cfg, system, seed)
    agent = Agent(kind=config.agent_kind,
                  rng=cell_stream(master, system, lam, seed, "policy-eval"),
                  params=params)
    results = []
    for ep in range(config.eval_episodes):
        es = episode_seed(master, system, lam, seed, "eval", ep)
        m, _ = run_episode(cell_cfg, system, agent, es)
        results.append(CellResult(system, lam, seed, ep, m))
    return results


def run_experiment(config: ExperimentConfig, out_dir, quiet: bool = True):
    """Full sweep over systems x lambdas x seeds; aggregates and writes the
    CSV outputs. Failed cells are reported and skipped, completed cells are
    still emitted. Returns ((cells_path, aggregate_path), failures)."""
    cells: list[CellResult] = []
    failures: list[CellFailure] = []
    for system in config.systems:
        for lam in config.lambdas:
            for seed in config.seeds:
                t0 = time.perf_counter()
                try:
                    cells.extend(run_cell(config, system, lam, seed))
                except Exception as e:  # noqa: BLE001 - cell isolation
                    failures.append(CellFailure(system, lam, seed, repr(e)))
                    continue
                if not quiet:
                    dt = time.perf_counter() - t0
                    print(f"cell {system} lambda={lam:g} seed={seed}: "
                          f"{config.eval_episodes} episodes in {dt:.1f}s")
    stats = aggregate(cells)
    paths = emit_csv(cells, stats, out_dir)
    return paths, failures


def calibrate_density(n_devices: int = 30, density: float = 0.34,
                      samples: int = 1000, seed: int = 7) -> float:
    """Mean measured conflict density over freshly sampled topologies."""
    cfg = EnvConfig(n_devices=n_devices, target_density=density, seed=seed)
    rng = substream(seed, STREAMS["topology"])
    total = 0.0
    for _ in range(samples):
        graph = build_conflict_graph(cfg, None, rng)
        total += measure_density(graph)
    return total / samples


# ---------------------------------------------------------------------------
# config files: flat "key = value" lines, '#' comments

_LIST_KEYS = {"systems", "lambdas", "seeds"}

_KEY_TARGETS = {
    # experiment
    "systems": ("exp", "systems", str),
    "lambdas": ("exp", "lambdas", float),
    "seeds": ("exp", "seeds", int),
    "eval_episodes": ("exp", "eval_episodes", int),
    "train_updates": ("exp", "train_updates", int),
    "agent": ("exp", "agent_kind", str),
    # environment
    "n_devices": ("env", "n_devices", int),
    "n_channels": ("env", "n_channels", int),
    "slots": ("env", "slots_per_episode", int),
    "queue_cap": ("env", "queue_cap", int),
    "sinr_threshold": ("env", "sinr_threshold", float),
    "noise_power": ("env", "noise_power", float),
    "topology": ("env", "topology_mode", str),
    "target_density": ("env", "target_density", float),
    "pathloss_exponent": ("env", "pathloss_exponent", float),
    "drop_on_violation": ("env", "drop_on_violation", bool),
    "master_seed": ("env", "seed", int),
    # budget
    "beta_max": ("budget", "beta_max", float),
    "beta_min": ("budget", "beta_min", float),
    "cost_risky": ("budget", "cost_risky", float),
    "cost_neutral": ("budget", "cost_neutral", float),
    "recover": ("budget", "recover", float),
    # learner
    "clip_epsilon": ("ppo", "clip_epsilon", float),
    "discount": ("ppo", "discount", float),
    "gae_lambda": ("ppo", "gae_lambda", float),
    "learning_rate": ("ppo", "learning_rate", float),
    "epochs_per_update": ("ppo", "epochs_per_update", int),
    "minibatch_size": ("ppo", "minibatch_size", int),
    "rollout_length": ("ppo", "rollout_length", int),
    "value_coeff": ("ppo", "value_coeff", float),
    "entropy_coeff": ("ppo", "entropy_coeff", float),
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_file(path) -> dict[str, dict]:
    """Parse a flat key = value config into per-section override dicts."""
    overrides: dict[str, dict] = {"exp": {}, "env": {}, "budget": {}, "ppo": {}}
    for lineno, raw in enumerate(open(path, encoding="utf-8"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_TARGETS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        section, attr, caster = _KEY_TARGETS[key]
        try:
            if key in _LIST_KEYS:
                parsed = tuple(caster(v.strip()) for v in value.split(",") if v.strip())
            elif caster is bool:
                parsed = _parse_bool(value)
            else:
                parsed = caster(value)
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {e}") from e
        overrides[section][attr] = parsed
    return overrides


def build_config(overrides: Optional[dict[str, dict]] = None) -> ExperimentConfig:
    overrides = overrides or {}
    env = EnvConfig(**overrides.get("env", {}))
    budget = BudgetConfig(**overrides.get("budget", {}))
    ppo = PPOConfig(**overrides.get("ppo", {}))
    exp = dict(overrides.get("exp", {}))
    if "systems" in exp:
        exp["systems"] = tuple(exp["systems"])
    return ExperimentConfig(env=env, budget=budget, ppo=ppo, **exp)
