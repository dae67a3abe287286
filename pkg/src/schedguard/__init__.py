"""Safety-gated reinforcement-learning scheduling on wireless uplinks.

A deterministic desk-scale simulator: a slotted uplink with queued Bernoulli
traffic and a conflict graph, a pre-execution safety layer (certificate
verification with greedy independent-set correction plus an empowerment
budget that rations multi-user autonomy), scheduling agents including a
compact policy-gradient learner, and a sweep harness that writes per-episode
and aggregated CSV metrics.
"""

from .env import (ChannelState, ConflictGraph, EnvConfig, EnvState, Schedule,
                  StepOutcome, as_schedule, build_conflict_graph, compute_sinr,
                  env_step, is_safe_set, measure_density, reset)
from .safety import (BudgetConfig, BudgetState, Certificate, SlotDecision,
                     budget_update, classify_action, conservative_action, gate,
                     greedy_mis, verify_schedule)
from .agents import (PolicyParams, PPOConfig, Transition, baseline_reactive_wrap,
                     baseline_unconstrained, build_observation, gae_advantages,
                     gradient_check, init_policy, init_policy_from_seed,
                     load_params, observe, ppo_loss, ppo_update, propose,
                     random_proposal, save_params, schedule_log_prob)
from .metrics import (AggregateStats, CellResult, EpisodeMetrics, SlotRecord,
                      aggregate, emit_csv, finalize_episode)
from .harness import (Agent, ExperimentConfig, build_config, calibrate_density,
                      parse_config_file, run_cell, run_episode, run_experiment,
                      run_slot, train_policy)

__version__ = "0.1.0"
