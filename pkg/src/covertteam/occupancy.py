"""Occupancy measures over deviation states and path log-likelihood ratios.

The occupancy measure of a policy assigns to every (deviation state, action)
pair the expected number of times the pair is visited before the chain leaves
the deviation set. The divergence between a deviating policy and the reference
is expressed directly on these measures: with state-to-state flows
``x_{s,q} = sum_a x_{s,a} P(s,a,q)`` and visit counts ``y_s = sum_a x_{s,a}``,

    KL(x || ref) = sum_s sum_q x_{s,q} * log(x_{s,q} / (ref_{s,q} * y_s))

with the usual conventions: a zero numerator contributes zero, positive mass
on a transition the reference chain never takes costs +infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import InfeasibleUnderReference, InfiniteOccupancy, NegativeEntry
from .mdp import (
    Action,
    Mdp,
    State,
    StationaryPolicy,
    chain_matrix,
    closed_classes_of_chain,
    validate_policy,
)

# occupancy entries below this are treated as numerical dust and zeroed
DUST = 1e-12


@dataclass
class OccupancyVector:
    """Expected visit counts on (deviation state, action) pairs.

    ``deviation_states`` fixes both the support and the ordering used by the
    convex programs; ``entries`` may contain explicit zeros.
    """

    mdp: Mdp
    deviation_states: Tuple[State, ...]
    entries: Dict[Tuple[State, Action], float]

    def state_mass(self, s: State) -> float:
        return sum(p for (s2, _a), p in self.entries.items() if s2 == s)

    def flow(self, s: State, q: State) -> float:
        """Mass moved from deviation state ``s`` to ``q`` in one step."""
        total = 0.0
        for a in self.mdp.actions_of[s]:
            x = self.entries.get((s, a), 0.0)
            if x > 0.0:
                total += x * self.mdp.prob(s, a, q)
        return total

    def masses(self) -> Dict[State, float]:
        out: Dict[State, float] = {s: 0.0 for s in self.deviation_states}
        for (s, _a), p in self.entries.items():
            out[s] += p
        return out


@dataclass
class PathRecord:
    """A sampled state trajectory, ending at absorption unless truncated."""

    states: Tuple[State, ...]
    truncated: bool = False
    log_likelihood_ratio: Optional[float] = None


def occupancy_from_policy(
    m: Mdp, pol: StationaryPolicy, deviation_states: Sequence[State]
) -> OccupancyVector:
    """Expected visit counts of ``pol`` on the deviation set.

    Solves the flow balance system restricted to the deviation states with a
    unit source at the initial state. Raises InfiniteOccupancy when the
    induced chain is recurrent on some reachable deviation state.
    """
    validate_policy(m, pol)
    dev = tuple(deviation_states)
    dev_set = set(dev)
    entries: Dict[Tuple[State, Action], float] = {
        (s, a): 0.0 for s in dev for a in m.actions_of[s]
    }
    if m.initial_state not in dev_set:
        return OccupancyVector(m, dev, entries)

    T = chain_matrix(m, pol)
    idx = [m.state_index[s] for s in dev]
    sub = T[np.ix_(idx, idx)]

    # states of the restricted chain reachable from the source
    n = len(dev)
    start = dev.index(m.initial_state)
    reach_mask = np.zeros(n, dtype=bool)
    stack = [start]
    reach_mask[start] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(sub[i] > 0.0)[0]:
            if not reach_mask[j]:
                reach_mask[j] = True
                stack.append(int(j))

    # a closed class inside the reachable restricted chain means divergence
    reach_idx = np.nonzero(reach_mask)[0]
    sub_r = sub[np.ix_(reach_idx, reach_idx)]
    # leak[i] > 0 iff state i can exit the restricted reachable set in one step
    leak = 1.0 - sub_r.sum(axis=1)
    restricted = _RestrictedChain(sub_r, leak)
    if restricted.has_closed_class():
        raise InfiniteOccupancy(
            "policy is recurrent on the deviation set; visit counts diverge"
        )

    y = np.zeros(n)
    src = np.zeros(len(reach_idx))
    src[list(reach_idx).index(start)] = 1.0
    y[reach_idx] = np.linalg.solve(np.eye(len(reach_idx)) - sub_r.T, src)
    for i, s in enumerate(dev):
        mass = y[i]
        if mass <= 0.0:
            continue
        for a, pa in pol.dist.get(s, {}).items():
            entries[(s, a)] = mass * pa
    return OccupancyVector(m, dev, entries)


class _RestrictedChain:
    """Helper: detect closed classes of a substochastic chain block."""

    def __init__(self, block: np.ndarray, leak: np.ndarray):
        self.block = block
        self.leak = leak

    def has_closed_class(self) -> bool:
        from .mdp import _tarjan_scc  # local import to keep module surfaces tidy

        n = self.block.shape[0]
        succ = [list(np.nonzero(self.block[i] > 0.0)[0]) for i in range(n)]
        for comp in _tarjan_scc(n, succ):
            members = set(comp)
            if any(self.leak[v] > 1e-15 for v in comp):
                continue
            if all(all(w in members for w in succ[v]) for v in comp):
                return True
        return False


def occupancy_reach(x: OccupancyVector, targets) -> float:
    """Reachability functional of an occupancy: mass flowing into ``targets``.

    Counts the flow from deviation states into target states plus the unit
    source when the initial state is itself a target.
    """
    targets = frozenset(targets)
    total = 1.0 if x.mdp.initial_state in targets else 0.0
    for s in x.deviation_states:
        for a in x.mdp.actions_of[s]:
            mass = x.entries.get((s, a), 0.0)
            if mass <= 0.0:
                continue
            for q, p in x.mdp.row(s, a).items():
                if q in targets:
                    total += mass * p
    return total


def policy_from_occupancy(
    x: OccupancyVector, ref_pol: StationaryPolicy
) -> StationaryPolicy:
    """Normalize occupancy rows into a policy; reference fills the gaps.

    Deviation states with zero mass, and every state outside the deviation
    set, keep the reference distribution.
    """
    dist: Dict[State, Dict[Action, float]] = {
        s: dict(row) for s, row in ref_pol.dist.items()
    }
    for s in x.deviation_states:
        mass = 0.0
        row: Dict[Action, float] = {}
        for a in x.mdp.actions_of[s]:
            v = x.entries.get((s, a), 0.0)
            if v < -1e-9:
                raise NegativeEntry((s, a), v)
            if v < DUST:
                v = 0.0
            row[a] = v
            mass += v
        if mass > 0.0:
            dist[s] = {a: v / mass for a, v in row.items() if v > 0.0}
    return StationaryPolicy(dist)


def kl_occupancy(x: OccupancyVector, ref_pol: StationaryPolicy) -> float:
    """Path-distribution KL divergence of the occupancy ``x`` from the reference.

    Measured on induced-chain transitions out of deviation states, natural
    log. Returns ``inf`` when ``x`` puts mass on a transition with zero
    reference probability.
    """
    m = x.mdp
    ref_chain = chain_matrix(m, ref_pol)
    total = 0.0
    for s in x.deviation_states:
        i = m.state_index[s]
        y = 0.0
        flows: Dict[State, float] = {}
        for a in m.actions_of[s]:
            mass = x.entries.get((s, a), 0.0)
            if mass < 0.0 and mass > -DUST:
                mass = 0.0
            if mass <= 0.0:
                continue
            y += mass
            for q, p in m.row(s, a).items():
                flows[q] = flows.get(q, 0.0) + mass * p
        if y <= 0.0:
            continue
        for q, f in flows.items():
            if f <= 0.0:
                continue
            r = ref_chain[i, m.state_index[q]]
            if r <= 0.0:
                return math.inf
            total += f * math.log(f / (r * y))
    return max(total, 0.0)


def path_llr(
    path: PathRecord,
    dec_pol: StationaryPolicy,
    ref_pol: StationaryPolicy,
    m: Mdp,
    _chains=None,
) -> float:
    """Log-likelihood ratio of a path: deviating chain against reference chain.

    Accumulates ``log pi^dec_{s,q} - log pi^ref_{s,q}`` over consecutive
    states, stopping once a state absorbing under both chains is reached.
    Returns ``-inf`` for a path the deviating chain cannot produce; raises
    InfeasibleUnderReference when a step is impossible under the reference
    (the ratio is +infinity and callers treat it as certain deception).

    ``_chains`` optionally carries precomputed (deviating, reference) chain
    matrices so batch callers avoid rebuilding them per path.
    """
    if _chains is not None:
        dec_chain, ref_chain = _chains
    else:
        dec_chain = chain_matrix(m, dec_pol)
        ref_chain = chain_matrix(m, ref_pol)
    total = 0.0
    for s, q in zip(path.states, path.states[1:]):
        i = m.state_index[s]
        if dec_chain[i, i] == 1.0 and ref_chain[i, i] == 1.0:
            break
        j = m.state_index[q]
        ps = ref_chain[i, j]
        pa = dec_chain[i, j]
        if ps <= 0.0:
            raise InfeasibleUnderReference(
                f"transition {s!r} -> {q!r} has zero reference probability"
            )
        if pa <= 0.0:
            return -math.inf
        total += math.log(pa) - math.log(ps)
    return total
