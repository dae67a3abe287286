"""Pre-execution safety layer.

Two mechanisms compose here. Certificate verification checks a proposed
schedule against the conflict graph and, when the proposal is dependent,
projects it onto a greedy maximal independent subset; the certificate records
the edges examined so the verdict can be re-checked. The empowerment budget
then rations multi-device autonomy: certified multi-user sets only execute
while the budget is above a threshold, otherwise a conservative single-user
schedule is substituted and the budget partially recovers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .env import ConflictGraph, Schedule, as_schedule, is_safe_set

VERDICT_SAFE = "safe"
VERDICT_CORRECTED = "corrected"

ACTION_RISKY = "risky"
ACTION_NEUTRAL = "neutral"


@dataclass(frozen=True)
class Certificate:
    """Re-checkable record of one verification.

    ``checked_edges`` lists every graph edge incident to the proposal (the
    constraints that could bear on the verdict); ``witness_conflicts`` the
    edges found inside it, empty exactly when the verdict is safe. A safe
    verdict certifies the proposal itself, a corrected one certifies a strict
    independent subset.
    """

    verdict: str
    proposal: Schedule
    certified_set: Schedule
    checked_edges: tuple[tuple[int, int], ...]
    witness_conflicts: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class BudgetConfig:
    beta_max: float = 8.0
    beta_min: float = 6.0
    cost_risky: float = 4.0
    cost_neutral: float = 1.0
    recover: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta_min <= self.beta_max:
            raise ValueError("need 0 <= beta_min <= beta_max")
        if min(self.cost_risky, self.cost_neutral, self.recover) < 0.0:
            raise ValueError("costs and recovery must be non-negative")


@dataclass(frozen=True)
class BudgetState:
    """Current budget level; always clamped to [0, beta_max]."""

    beta: float


@dataclass(frozen=True)
class SlotDecision:
    """Full audit record of one slot's decision pipeline."""

    proposal: Schedule
    certificate: Optional[Certificate]
    eb_blocked: bool
    executed: Schedule
    action_class: Optional[str]
    cost_charged: float
    recover_applied: float
    beta_after: Optional[float]


def greedy_mis(proposal: Schedule, graph: ConflictGraph,
               queues: Sequence[int]) -> Schedule:
    """Maximal independent subset of the proposal, greedily built.

    Members are visited by queue length descending (serve the most backlogged
    first), ties broken by lowest device index, and admitted when they have no
    already-admitted neighbor. No skipped member can be added afterwards, so
    the result is maximal within the proposal.
    """
    members = as_schedule(proposal, graph.n_vertices)
    if not members:
        raise ValueError("greedy_mis needs a nonempty proposal")
    order = sorted(members, key=lambda i: (-int(queues[i]), i))
    admitted: list[int] = []
    taken: set[int] = set()
    for i in order:
        if not (graph.adjacency[i] & taken):
            admitted.append(i)
            taken.add(i)
    return tuple(admitted)


def verify_schedule(proposal: Schedule, graph: ConflictGraph,
                    queues: Sequence[int]) -> Certificate:
    """Certify a proposal against the conflict graph.

    Independent proposals pass unchanged; dependent ones are corrected to
    ``greedy_mis(proposal)`` with every internal edge listed as a witness.
    """
    members = as_schedule(proposal, graph.n_vertices)
    inside = set(members)
    checked = sorted({e for i in inside for e in _incident_edges(graph, i)})
    witnesses = tuple(e for e in checked if e[0] in inside and e[1] in inside)
    if not witnesses:
        return Certificate(VERDICT_SAFE, members, members, tuple(checked), ())
    corrected = greedy_mis(members, graph, queues)
    return Certificate(VERDICT_CORRECTED, members, corrected, tuple(checked),
                       witnesses)


def _incident_edges(graph: ConflictGraph, vertex: int):
    for j in graph.adjacency[vertex]:
        yield (min(vertex, j), max(vertex, j))


def classify_action(certificate: Certificate) -> str:
    """Risky exactly when a multi-device proposal had to be corrected.

    Single-user, empty and safe multi-user proposals are neutral; safe
    multi-user executions still pay the neutral cost downstream, so sustained
    multi-user behavior drains the budget slowly rather than not at all.
    """
    if len(certificate.proposal) > 1 and certificate.verdict == VERDICT_CORRECTED:
        return ACTION_RISKY
    return ACTION_NEUTRAL


def budget_update(state: BudgetState, config: BudgetConfig, cost: float,
                  recover: float) -> BudgetState:
    """One budget step: subtract the cost, add the recovery, clamp to
    [0, beta_max]. The floor at zero keeps recovery time independent of how
    long the budget has been exhausted."""
    beta = min(config.beta_max, state.beta - cost + recover)
    return BudgetState(beta=max(0.0, beta))


def conservative_action(queues: Sequence[int],
                        graph: Optional[ConflictGraph] = None) -> Schedule:
    """Single-user fallback: the backlogged device with the longest queue,
    lowest index on ties; empty when nothing is backlogged. Singletons are
    independent in any graph, so the graph never changes the answer."""
    best = -1
    best_q = 0
    for i, q in enumerate(queues):
        if q > best_q:
            best, best_q = i, int(q)
    return (best,) if best >= 0 else ()


def gate(certificate: Certificate, budget: BudgetState, config: BudgetConfig,
         queues: Sequence[int],
         graph: Optional[ConflictGraph] = None) -> SlotDecision:
    """Empowerment-budget gate, applied after verification.

    A certified multi-user set executes only while the current budget is at
    least beta_min; below that it is downgraded to the conservative
    single-user action and the recovery increment is granted. The action cost
    (risky or neutral, from the certificate) is charged every slot, blocked
    or not, and the budget update runs last.
    """
    blocked = len(certificate.certified_set) > 1 and budget.beta < config.beta_min
    if blocked:
        executed = conservative_action(queues, graph)
        recover = config.recover
    else:
        executed = certificate.certified_set
        recover = 0.0
    action_class = classify_action(certificate)
    cost = config.cost_risky if action_class == ACTION_RISKY else config.cost_neutral
    after = budget_update(budget, config, cost, recover)
    return SlotDecision(
        proposal=certificate.proposal,
        certificate=certificate,
        eb_blocked=blocked,
        executed=executed,
        action_class=action_class,
        cost_charged=cost,
        recover_applied=recover,
        beta_after=after.beta,
    )
