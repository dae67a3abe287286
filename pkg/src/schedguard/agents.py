"""Scheduling policies.

The learner is a compact two-layer perceptron with independent Bernoulli
inclusion heads, one per device, capped at the channel budget. Keeping the
heads independent keeps the likelihood of any executed set factorized, which
is what lets the update consume the safety-corrected set instead of the raw
proposal. Training uses clipped-ratio policy optimization with generalized
advantage estimation; everything is plain numpy so runs are deterministic and
desk-scale.

Also here: the queue-greedy baseline used by the training-free experiment
mode and the post-hoc projection wrapper for the reactive system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .env import EnvState, Schedule, as_schedule
from .safety import verify_schedule

HIDDEN_WIDTH = 64

# Fresh policies start biased against inclusion so an untrained agent
# under-fills the channel budget instead of proposing half the network.
INIT_PROPOSAL_BIAS = -2.0

_PARAM_FIELDS = ("w1", "b1", "w2", "b2", "w_v", "b_v")


# ---------------------------------------------------------------------------
# observations

def build_observation(queues: Sequence[int], queue_cap: int,
                      degree_frac: np.ndarray,
                      budget_frac: float = 1.0) -> np.ndarray:
    """Layout: per-device queue fill, one budget entry, per-device normalized
    conflict degree. All entries in [0, 1]; dimension 2n + 1."""
    qf = np.asarray(queues, dtype=np.float64) / float(queue_cap)
    return np.concatenate([qf, [float(budget_frac)], degree_frac])


def observe(state: EnvState, beta: Optional[float] = None,
            beta_max: Optional[float] = None) -> np.ndarray:
    """Observation for the current slot; systems without a budget report a
    full budget fraction of 1."""
    n = state.config.n_devices
    degree_frac = state.graph.degrees() / max(n - 1, 1)
    budget_frac = 1.0 if beta is None else beta / beta_max
    return build_observation(state.queues, state.config.queue_cap,
                             degree_frac, budget_frac)


def split_observation(obs: np.ndarray):
    n = (obs.shape[0] - 1) // 2
    return obs[:n], float(obs[n]), obs[n + 1:]


# ---------------------------------------------------------------------------
# policy network

@dataclass(eq=False)
class PolicyParams:
    """Two-layer perceptron: shared tanh hidden layer, per-device logit head
    and a scalar value head."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray

    @property
    def n_devices(self) -> int:
        return self.w2.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(getattr(self, f).copy() for f in _PARAM_FIELDS))


def init_policy(n_devices: int, rng: np.random.Generator,
                hidden: int = HIDDEN_WIDTH,
                proposal_bias: float = INIT_PROPOSAL_BIAS) -> PolicyParams:
    obs_dim = 2 * n_devices + 1
    return PolicyParams(
        w1=rng.normal(0.0, 1.0 / np.sqrt(obs_dim), size=(obs_dim, hidden)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, n_devices)),
        b2=np.full(n_devices, proposal_bias, dtype=np.float64),
        w_v=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
        b_v=np.zeros(1),
    )


def init_policy_from_seed(n_devices: int, seed: int, **kw) -> PolicyParams:
    return init_policy(n_devices, np.random.default_rng(np.random.SeedSequence(seed)), **kw)


def policy_forward(params: PolicyParams, obs: np.ndarray):
    """Returns (logits, value); accepts a single observation or a batch."""
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    h = np.tanh(x @ params.w1 + params.b1)
    logits = h @ params.w2 + params.b2
    value = h @ params.w_v + params.b_v[0]
    if single:
        return logits[0], float(value[0])
    return logits, value


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def propose(params: PolicyParams, obs: np.ndarray, n_channels: int,
            rng: np.random.Generator) -> tuple[Schedule, float]:
    """Sample a proposal: every backlogged device enters independently with
    probability sigmoid(logit); devices with empty queues are never proposed.
    If the draw exceeds the channel budget, the highest-logit members are
    kept. The returned log-probability is that of the pre-cap inclusion
    pattern over backlogged devices (the cap's effect on the likelihood is
    deliberately ignored)."""
    queue_frac, _, _ = split_observation(obs)
    backlog = queue_frac > 0.0
    logits, _ = policy_forward(params, obs)
    probs = _sigmoid(logits)
    draws = rng.random(len(logits))  # one draw per device keeps replay stable
    include = (draws < probs) & backlog

    log_terms = np.where(include, _log_sigmoid(logits), _log_sigmoid(-logits))
    log_prob = float(np.sum(log_terms[backlog]))

    chosen = np.flatnonzero(include)
    if len(chosen) > n_channels:
        keep = sorted(chosen, key=lambda i: (-logits[i], i))[:n_channels]
        chosen = np.array(sorted(keep))
    return tuple(int(i) for i in chosen), log_prob


def schedule_log_prob(params: PolicyParams, obs: np.ndarray,
                      executed: Schedule) -> float:
    """Log-likelihood of an executed (possibly safety-corrected) set as the
    joint Bernoulli pattern over backlogged devices. This is the quantity the
    policy ratio is built from, so corrections flow into the gradient."""
    queue_frac, _, _ = split_observation(obs)
    backlog = queue_frac > 0.0
    executed = as_schedule(executed, len(queue_frac))
    off_backlog = [i for i in executed if not backlog[i]]
    if off_backlog:
        raise ValueError(f"executed devices without backlog: {off_backlog}")
    logits, _ = policy_forward(params, obs)
    member = np.zeros(len(logits), dtype=bool)
    member[list(executed)] = True
    log_terms = np.where(member, _log_sigmoid(logits), _log_sigmoid(-logits))
    return float(np.sum(log_terms[backlog]))


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class PPOConfig:
    clip_epsilon: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs_per_update: int = 4
    minibatch_size: int = 64
    rollout_length: int = 512
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01

    def __post_init__(self):
        if self.clip_epsilon <= 0.0:
            raise ValueError("clip_epsilon must be positive")
        if not 0.0 <= self.discount <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("discount and gae_lambda must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class Transition:
    obs: np.ndarray
    executed: Schedule
    log_prob: float
    reward: float
    value: float
    done: bool

    def __post_init__(self):
        if self.reward < 0.0:
            raise ValueError("reward must be non-negative")
        if self.log_prob > 1e-9:
            raise ValueError("log_prob must be <= 0")


def gae_advantages(transitions: Sequence[Transition], config: PPOConfig,
                   last_value: float = 0.0, normalize: bool = True):
    """Generalized advantage estimation over one contiguous rollout.

    delta_t = r_t + g * v_{t+1} * (1 - done_t) - v_t, discounted-lambda
    accumulated backwards; ``last_value`` bootstraps the step after the
    rollout when the final transition did not end an episode. Returns
    (advantages, returns) where returns = advantages + values; advantages are
    normalized to zero mean and unit variance unless disabled.
    """
    if not transitions:
        raise ValueError("empty rollout")
    n = len(transitions)
    rewards = np.array([t.reward for t in transitions])
    values = np.array([t.value for t in transitions])
    dones = np.array([t.done for t in transitions], dtype=np.float64)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        v_next = values[t + 1] if t + 1 < n else last_value
        delta = rewards[t] + config.discount * v_next * nonterminal - values[t]
        running = delta + config.discount * config.gae_lambda * nonterminal * running
        adv[t] = running
    returns = adv + values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


@dataclass(eq=False)
class RolloutBatch:
    """Training batch in array form: executed-set membership and backlog
    masks are per device, everything else per sample."""

    obs: np.ndarray
    actions: np.ndarray
    backlog: np.ndarray
    old_log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]

    def take(self, idx) -> "RolloutBatch":
        return RolloutBatch(self.obs[idx], self.actions[idx], self.backlog[idx],
                            self.old_log_prob[idx], self.advantages[idx],
                            self.returns[idx])


def build_batch(transitions: Sequence[Transition], advantages: np.ndarray,
                returns: np.ndarray) -> RolloutBatch:
    n_devices = (transitions[0].obs.shape[0] - 1) // 2
    obs = np.stack([t.obs for t in transitions])
    actions = np.zeros((len(transitions), n_devices))
    for row, t in enumerate(transitions):
        actions[row, list(t.executed)] = 1.0
    backlog = (obs[:, :n_devices] > 0.0).astype(np.float64)
    old_lp = np.array([t.log_prob for t in transitions])
    return RolloutBatch(obs, actions, backlog, old_lp,
                        np.asarray(advantages, dtype=np.float64),
                        np.asarray(returns, dtype=np.float64))


def ppo_loss(params: PolicyParams, batch: RolloutBatch, config: PPOConfig):
    """Clipped-surrogate objective plus value regression minus an entropy
    bonus. Returns (total, parts) where parts holds the unweighted pieces."""
    h = np.tanh(batch.obs @ params.w1 + params.b1)
    logits = h @ params.w2 + params.b2
    value = h @ params.w_v + params.b_v[0]
    p = _sigmoid(logits)

    log_terms = np.where(batch.actions > 0.0, _log_sigmoid(logits),
                         _log_sigmoid(-logits))
    log_prob = np.sum(log_terms * batch.backlog, axis=1)
    ratio = np.exp(log_prob - batch.old_log_prob)
    lo, hi = 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, lo, hi) * batch.advantages
    surrogate = float(np.mean(np.minimum(unclipped, clipped)))

    value_loss = float(np.mean((value - batch.returns) ** 2))
    ent_terms = -(p * _log_sigmoid(logits) + (1.0 - p) * _log_sigmoid(-logits))
    entropy = float(np.mean(np.sum(ent_terms * batch.backlog, axis=1)))

    total = -surrogate + config.value_coeff * value_loss - config.entropy_coeff * entropy
    parts = {"surrogate": surrogate, "value_loss": value_loss, "entropy": entropy}
    return total, parts


def ppo_gradients(params: PolicyParams, batch: RolloutBatch, config: PPOConfig):
    """Analytic gradient of ``ppo_loss`` with respect to every parameter."""
    n = len(batch)
    h = np.tanh(batch.obs @ params.w1 + params.b1)
    logits = h @ params.w2 + params.b2
    value = h @ params.w_v + params.b_v[0]
    p = _sigmoid(logits)

    log_terms = np.where(batch.actions > 0.0, _log_sigmoid(logits),
                         _log_sigmoid(-logits))
    log_prob = np.sum(log_terms * batch.backlog, axis=1)
    ratio = np.exp(log_prob - batch.old_log_prob)
    lo, hi = 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, lo, hi) * batch.advantages

    # min() picks the unclipped branch on ties; inside the clip window both
    # branches coincide, outside it the clipped branch is flat.
    take_unclipped = unclipped <= clipped
    inside = (ratio > lo) & (ratio < hi)
    factor = np.where(take_unclipped | inside, ratio * batch.advantages, 0.0)

    dlogp = batch.backlog * (batch.actions - p)
    d_logits = -(factor[:, None] * dlogp) / n
    d_logits += (config.entropy_coeff / n) * batch.backlog * logits * p * (1.0 - p)
    d_value = config.value_coeff * 2.0 * (value - batch.returns) / n

    grads = PolicyParams(
        w1=np.zeros_like(params.w1), b1=np.zeros_like(params.b1),
        w2=h.T @ d_logits, b2=d_logits.sum(axis=0),
        w_v=h.T @ d_value, b_v=np.array([d_value.sum()]),
    )
    dh = d_logits @ params.w2.T + np.outer(d_value, params.w_v)
    dpre = dh * (1.0 - h ** 2)
    grads.w1 = batch.obs.T @ dpre
    grads.b1 = dpre.sum(axis=0)
    return grads


def ppo_update(params: PolicyParams, batch: RolloutBatch, config: PPOConfig,
               rng: np.random.Generator) -> PolicyParams:
    """One optimization round: several passes of Adam steps over shuffled
    minibatches of the batch. A non-finite loss aborts with a diagnostic
    rather than silently corrupting the parameters."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    new = params.copy()
    flat = flatten_params(new)
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    step = 0
    for _ in range(config.epochs_per_update):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            mini = batch.take(idx)
            loss, parts = ppo_loss(new, mini, config)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} (parts={parts}); update aborted")
            g = flatten_params(ppo_gradients(new, mini, config))
            step += 1
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1.0 - 0.9 ** step)
            v_hat = v / (1.0 - 0.999 ** step)
            flat = flat - config.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
            new = unflatten_params(flat, new)
    return new


def flatten_params(params: PolicyParams) -> np.ndarray:
    return np.concatenate([getattr(params, f).ravel() for f in _PARAM_FIELDS])


def unflatten_params(flat: np.ndarray, template: PolicyParams) -> PolicyParams:
    out = {}
    pos = 0
    for f in _PARAM_FIELDS:
        arr = getattr(template, f)
        out[f] = flat[pos:pos + arr.size].reshape(arr.shape).copy()
        pos += arr.size
    return PolicyParams(**out)


def params_fingerprint(params: PolicyParams) -> str:
    import hashlib
    return hashlib.sha256(flatten_params(params).tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# baselines

def baseline_unconstrained(obs: np.ndarray, n_channels: int,
                           rng: Optional[np.random.Generator] = None) -> Schedule:
    """Queue-greedy proposer: up to n_channels backlogged devices with the
    longest queues, lowest index on ties. Deterministic; rng accepted for
    interface parity."""
    queue_frac, _, _ = split_observation(obs)
    backlogged = np.flatnonzero(queue_frac > 0.0)
    order = sorted(backlogged, key=lambda i: (-queue_frac[i], i))
    return tuple(int(i) for i in order[:n_channels])


def random_proposal(obs: np.ndarray, n_channels: int,
                    rng: np.random.Generator) -> Schedule:
    """Uniform-size random subset of the backlogged devices, for debugging."""
    queue_frac, _, _ = split_observation(obs)
    backlogged = np.flatnonzero(queue_frac > 0.0)
    k_max = min(n_channels, len(backlogged))
    k = int(rng.integers(0, k_max + 1))
    if k == 0:
        return ()
    members = rng.choice(backlogged, size=k, replace=False)
    return tuple(sorted(int(i) for i in members))


def baseline_reactive_wrap(proposal: Schedule, graph, queues) -> Schedule:
    """Post-hoc projection: any proposal is replaced by its certified subset.
    Safe proposals pass unchanged; unsafe ones count as prevented upstream."""
    if not proposal:
        return ()
    return verify_schedule(proposal, graph, queues).certified_set


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "schedguard-policy-v1"


def save_params(path, params: PolicyParams, seed: Optional[int] = None,
                updates: int = 0) -> None:
    """Text checkpoint: one JSON header line (format tag, layer shapes, seed,
    update count) followed by one parameter value per line in canonical
    order w1, b1, w2, b2, w_v, b_v."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "shapes": {f: list(getattr(params, f).shape) for f in _PARAM_FIELDS},
        "seed": seed,
        "updates": updates,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(format(x, ".17g") for x in flatten_params(params))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path) -> tuple[PolicyParams, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format in {path}")
    template = PolicyParams(**{
        f: np.zeros(header["shapes"][f]) for f in _PARAM_FIELDS})
    flat = np.array([float(x) for x in lines[1:] if x.strip()])
    expected = sum(np.prod(header["shapes"][f], dtype=int) for f in _PARAM_FIELDS)
    if flat.size != expected:
        raise ValueError(f"checkpoint {path} has {flat.size} values, expected {expected}")
    return unflatten_params(flat, template), header


# ---------------------------------------------------------------------------
# gradient verification

def gradient_check(h: float = 1e-5) -> float:
    """Compare the analytic loss gradient against central finite differences
    on a fixed 3-device toy batch and return the worst relative error.

    The batch is constructed so every sample's ratio sits well away from the
    clip boundaries (some inside the window, some on the flat region), which
    keeps the loss smooth in the finite-difference neighborhood.
    """
    n_devices = 3
    rng = np.random.default_rng(np.random.SeedSequence(90210))
    params = init_policy(n_devices, rng)
    config = PPOConfig()

    obs_rows = []
    executed_sets = [(0,), (1, 2), (), (0, 2), (1,), (0, 1, 2)]
    for _ in executed_sets:
        queue_frac = rng.uniform(0.2, 1.0, size=n_devices)
        degree_frac = rng.uniform(0.0, 1.0, size=n_devices)
        obs_rows.append(np.concatenate([queue_frac,
                                        [rng.uniform(0.3, 1.0)], degree_frac]))
    obs = np.stack(obs_rows)

    # Offsets place the ratios at exp(-offset): three inside the clip window,
    # two on the plateaus, none within 0.05 of a boundary.
    offsets = np.array([0.0, 0.05, -0.05, 0.35, -0.35, 0.02])
    transitions = []
    for row, (o, ex) in enumerate(zip(obs, executed_sets)):
        lp = schedule_log_prob(params, o, ex)
        transitions.append(Transition(obs=o, executed=ex,
                                      log_prob=lp + offsets[row],
                                      reward=1.0, value=0.0, done=False))
    advantages = np.array([1.2, -0.8, 0.5, -1.5, 2.0, 0.3])
    returns = np.array([2.0, 0.5, 1.0, -0.3, 1.5, 0.2])
    batch = build_batch(transitions, advantages, returns)

    analytic = flatten_params(ppo_gradients(params, batch, config))
    theta0 = flatten_params(params)

    def loss_at(theta):
        total, _ = ppo_loss(unflatten_params(theta, params), batch, config)
        return total

    fd = np.zeros_like(theta0)
    for k in range(theta0.size):
        bump = np.zeros_like(theta0)
        bump[k] = h
        fd[k] = (loss_at(theta0 + bump) - loss_at(theta0 - bump)) / (2.0 * h)

    denom = np.maximum(1e-6, np.maximum(np.abs(analytic), np.abs(fd)))
    return float(np.max(np.abs(analytic - fd) / denom))
