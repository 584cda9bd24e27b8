"""Supervisor-side machinery: Bayesian beliefs and budgeted elimination.

The supervisor watches each agent's state paths, updates a posterior that the
agent is behaving (not deceptive), and then eliminates the most suspicious
agents it can afford. ``belief_proxy`` is the planning-time stand-in for the
posterior, with the observed log-likelihood ratio replaced by its expectation
(rounds times divergence) inside the exponent.

``knapsack_fixture`` builds tiny observation instances whose induced beliefs
and utilities realize an arbitrary real-valued knapsack problem; it exists to
exercise the elimination solvers against a known combinatorial answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from .errors import KappaTooLarge, OutOfRange, TooManyAgents, TruncatedPath
from .mdp import Mdp, StationaryPolicy
from .occupancy import PathRecord, path_llr


@dataclass(frozen=True)
class BeliefState:
    """Per-agent posteriors that each agent is NOT deceptive."""

    beliefs: Tuple[float, ...]
    priors: Tuple[float, ...]
    observed_rounds: int = 0

    def __post_init__(self):
        if len(self.beliefs) != len(self.priors):
            raise OutOfRange("beliefs/priors length mismatch", len(self.beliefs))
        for th in self.beliefs:
            if not (0.0 <= th <= 1.0):
                raise OutOfRange("belief", th)
        for p in self.priors:
            if not (0.0 < p < 1.0):
                raise OutOfRange("prior", p)
        if self.observed_rounds < 0:
            raise OutOfRange("observed_rounds", self.observed_rounds)

    @classmethod
    def initial(cls, priors: Iterable[float]) -> "BeliefState":
        priors = tuple(priors)
        return cls(tuple(1.0 - p for p in priors), priors, 0)


@dataclass(frozen=True)
class EliminationBudget:
    """Elimination capacity and per-agent utility weights."""

    capacity: float
    utilities: Tuple[float, ...]

    def __post_init__(self):
        if self.capacity < 0.0:
            raise OutOfRange("capacity", self.capacity)
        for v in self.utilities:
            if v < 0.0:
                raise OutOfRange("utility", v)


def _posterior(prior: float, total_llr: float) -> float:
    """theta = (1-p) / (p e^L + (1-p)), the stable form of
    1 - p / (p + (1-p) e^{-L})."""
    if not (0.0 < prior < 1.0):
        raise OutOfRange("prior", prior)
    if total_llr == -math.inf:
        return 1.0
    try:
        e = math.exp(total_llr)
    except OverflowError:
        return 0.0
    if math.isinf(e):
        return 0.0
    return (1.0 - prior) / (prior * e + (1.0 - prior))


def belief_update(
    prior: float,
    paths: Sequence[PathRecord],
    dec_pol: StationaryPolicy,
    ref_pol: StationaryPolicy,
    m: Mdp,
    _chains=None,
) -> float:
    """Posterior that the agent follows the reference, given observed paths.

    The likelihood ratio of each path is taken against the deceptive
    alternative ``dec_pol``; ratios accumulate additively in log space.
    Truncated paths carry no usable likelihood and are rejected. ``_chains``
    is forwarded to ``path_llr`` for batch callers.
    """
    total = 0.0
    for path in paths:
        if path.truncated:
            raise TruncatedPath(f"path of length {len(path.states)} never absorbed")
        total += path_llr(path, dec_pol, ref_pol, m, _chains=_chains)
        if total == -math.inf:
            break
    return _posterior(prior, total)


def belief_proxy(prior: float, m_r: int, kl: float) -> float:
    """Planning-time belief: the log-likelihood ratio replaced by m_r * kl."""
    if kl < 0.0:
        raise OutOfRange("kl", kl)
    if m_r < 0:
        raise OutOfRange("m_r", m_r)
    return _posterior(prior, m_r * kl)


def eliminate_greedy(beliefs: Sequence[float], capacity: float) -> frozenset:
    """Eliminate agents in increasing belief order while the budget holds.

    Equal-utility rule: sort ascending by (belief, index), add agents while
    the accumulated belief mass stays within capacity, stop at the first
    agent that does not fit.
    """
    if capacity < 0.0:
        raise OutOfRange("capacity", capacity)
    order = sorted(range(len(beliefs)), key=lambda i: (beliefs[i], i))
    chosen: List[int] = []
    taken: List[float] = []
    for i in order:
        # fsum keeps the feasibility check order-independent, matching the
        # exact enumeration on borderline capacities
        if math.fsum(taken + [beliefs[i]]) > capacity:
            break
        chosen.append(i)
        taken.append(beliefs[i])
    return frozenset(chosen)


def eliminate_general(
    beliefs: Sequence[float], utilities: Sequence[float], capacity: float
) -> frozenset:
    """Exact elimination: maximize total suspicion subject to the budget.

    Maximizes sum of -log(belief) over the eliminated set subject to
    sum of belief * utility <= capacity, by enumerating subsets. Ties go to
    the lexicographically smallest index tuple. Zero beliefs carry infinite
    suspicion and are taken whenever their (zero) weight fits.
    """
    n = len(beliefs)
    if n != len(utilities):
        raise OutOfRange("beliefs/utilities length mismatch", n)
    if n > 20:
        raise TooManyAgents(f"exact elimination supports at most 20 agents, got {n}")
    if capacity < 0.0:
        raise OutOfRange("capacity", capacity)
    weights = [beliefs[i] * utilities[i] for i in range(n)]
    profits = [(-math.log(beliefs[i]) if beliefs[i] > 0.0 else math.inf) for i in range(n)]

    # suspicion is ranked as (zero-belief members, fsum of finite terms):
    # the extended-real order where every zero belief is equally infinite.
    # fsum makes equal multisets compare exactly equal, so the lexicographic
    # tie rule is not at the mercy of summation order.
    best_value = (-1, -math.inf)
    best_subset: Tuple[int, ...] = ()
    for mask in range(1 << n):
        members = tuple(i for i in range(n) if mask >> i & 1)
        if math.fsum(weights[i] for i in members) > capacity:
            continue
        value = (
            sum(1 for i in members if math.isinf(profits[i])),
            math.fsum(profits[i] for i in members if not math.isinf(profits[i])),
        )
        if value > best_value or (value == best_value and members < best_subset):
            best_value = value
            best_subset = members
    return frozenset(best_subset)


def knapsack_fixture(
    weights: Sequence[float], profits: Sequence[float], kappa: float
) -> List[Tuple[Mdp, StationaryPolicy, StationaryPolicy, PathRecord, float, float]]:
    """Observation instances whose beliefs realize a given knapsack problem.

    For each item, a three-state MDP (start ``o``, absorbing ``a`` and ``b``)
    with the observed path o -> a. The deceptive policy always moves to
    ``a``; the reference moves there with probability
    r = kappa e^{-p} / ((1-kappa)(1 - e^{-p})), which makes the posterior
    after the observation exactly e^{-p}. Utilities V = w / e^{-p} then give
    elimination weight theta * V = w and suspicion -log(theta) = p.

    Returns (mdp, reference, deceptive, path, utility, prior) per item.
    """
    if not (0.0 < kappa < 1.0):
        raise OutOfRange("kappa", kappa)
    if len(weights) != len(profits):
        raise OutOfRange("weights/profits length mismatch", len(weights))
    out = []
    for i, (w, p) in enumerate(zip(weights, profits)):
        if w <= 0.0 or p <= 0.0:
            raise OutOfRange(f"knapsack item {i}", (w, p))
        theta = math.exp(-p)
        ratio = kappa * theta / ((1.0 - kappa) * (1.0 - theta))
        if ratio >= 1.0:
            raise KappaTooLarge(
                f"item {i}: prior {kappa} too large for profit {p} "
                f"(reference ratio {ratio:.6g} >= 1)"
            )
        m = Mdp(
            ["o", "a", "b"],
            {"o": ["to_a", "to_b"], "a": ["stay"], "b": ["stay"]},
            [
                ("o", "to_a", "a", 1.0),
                ("o", "to_b", "b", 1.0),
                ("a", "stay", "a", 1.0),
                ("b", "stay", "b", 1.0),
            ],
            "o",
        )
        ref = StationaryPolicy(
            {
                "o": {"to_a": ratio, "to_b": 1.0 - ratio},
                "a": {"stay": 1.0},
                "b": {"stay": 1.0},
            }
        )
        dec = StationaryPolicy.deterministic({"o": "to_a", "a": "stay", "b": "stay"})
        path = PathRecord(states=("o", "a"), truncated=False)
        out.append((m, ref, dec, path, w / theta, kappa))
    return out
