"""Team synthesis: worst-case deceptive policies and decoy allocation.

Worst-case synthesis minimizes the largest per-agent divergence budget K
subject to the team's disjunctive reachability constraint. The constraint
margin is monotone in K, so bisection over K with the per-agent subproblems
as the evaluation oracle finds the optimum to within the tolerance; the
returned budget is the upper bisection endpoint, so it always satisfies the
constraint.

Decoy allocation sweeps the number k of sacrificial agents. Decoys play
divergence K*gamma_prime (strictly above the team budget), so after the
supervisor ranks agents by belief proxy every decoy sorts below every kept
agent. B_k is the elimination capacity the supervisor must exceed to reach
a kept agent: k decoy proxies plus one kept proxy. The sweep maximizes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import scipy.optimize as sopt

from .errors import (
    AllFailed,
    Infeasible,
    OutOfRange,
    UpperBoundNotFeasible,
    ValidationError,
)
from .mdp import StationaryPolicy, disjunctive_reach
from .occupancy import OccupancyVector, policy_from_occupancy
from .subproblem import (
    DEFAULT_TOL,
    INFEASIBLE_WITHOUT_ZERO_PROB,
    AgentSpec,
    SubproblemSolution,
    ToleranceSet,
    compute_kmax,
    max_reach_profile,
    policy_with_kl,
    reach_subproblem,
)
from .supervisor import belief_proxy

# slack when comparing a divergence level against an agent's attainable
# ceiling; keeps exact-boundary agents eligible
_CEILING_SLACK = 1e-9


@dataclass
class TeamProblem:
    """Synthesis instance: agents plus the team-level knobs.

    ``k_max=None`` means derive the bisection ceiling from the agents'
    support-preserving max-reach policies. ``delta_margin`` is the slack the
    supervisor capacity report subtracts to keep the strict inequality.
    """

    agents: List[AgentSpec]
    nu_A: float
    epsilon: float = 1e-4
    k_max: Optional[float] = None
    gamma_prime: float = 1.2
    m_r: int = 1
    delta_margin: float = 0.0

    def __post_init__(self):
        if not self.agents:
            raise ValidationError("a team needs at least one agent")
        if not (0.0 <= self.nu_A <= 1.0):
            raise OutOfRange("nu_A", self.nu_A)
        if self.epsilon <= 0.0:
            raise OutOfRange("epsilon", self.epsilon)
        if self.k_max is not None and self.k_max < 0.0:
            raise OutOfRange("k_max", self.k_max)
        if self.gamma_prime <= 1.0:
            raise OutOfRange("gamma_prime", self.gamma_prime)
        if int(self.m_r) != self.m_r or self.m_r < 1:
            raise OutOfRange("m_r", self.m_r)
        self.m_r = int(self.m_r)
        if self.delta_margin < 0.0:
            raise OutOfRange("delta_margin", self.delta_margin)


@dataclass
class SynthesisResult:
    policies: Tuple[StationaryPolicy, ...]
    occupancies: Tuple[OccupancyVector, ...]
    kl_bound: float
    per_agent_kl: Tuple[float, ...]
    per_agent_reach: Tuple[float, ...]
    disjunctive_reach: float


@dataclass
class EliminationResult:
    b_table: Tuple[Tuple[int, float, float, bool], ...]  # (k, B_k, K_k, fail)
    k_star: int
    decoy_set: Tuple[int, ...]
    policies: Tuple[StationaryPolicy, ...]
    non_decoy_kl: float
    decoy_kl: float


def reach_evaluate(
    agents: Sequence[AgentSpec], nu_A: float, kl_bound: float,
    tol: ToleranceSet = DEFAULT_TOL,
) -> float:
    """Disjunctive team reachability at per-agent budget ``kl_bound``, minus
    the required level. Nondecreasing in the budget."""
    reaches = [reach_subproblem(a, kl_bound, tol).reach_value for a in agents]
    return disjunctive_reach(reaches) - nu_A


def bisection(f: Callable[[float], float], k_max: float, eps: float) -> float:
    """Smallest budget meeting ``f >= 0``, to within ``eps``, from above.

    Maintains f(lower) < 0 <= f(upper) and halves the gap; a zero at the
    midpoint shrinks the upper end rather than terminating, so the result
    approaches the crossing from above. Returns the upper endpoint.
    """
    if eps <= 0.0:
        raise OutOfRange("eps", eps)
    if k_max < 0.0:
        raise OutOfRange("k_max", k_max)
    if f(0.0) >= 0.0:
        return 0.0
    if f(k_max) < 0.0:
        raise UpperBoundNotFeasible(
            f"constraint margin still negative at the budget ceiling {k_max:.6g}"
        )
    lower, upper = 0.0, k_max
    while upper - lower > eps:
        mid = 0.5 * (lower + upper)
        if f(mid) >= 0.0:
            upper = mid
        else:
            lower = mid
    return upper


def _resolved_kmax(problem: TeamProblem) -> float:
    if problem.k_max is not None:
        return float(problem.k_max)
    ceiling = compute_kmax(problem.agents, problem.nu_A)
    if ceiling is INFEASIBLE_WITHOUT_ZERO_PROB:
        raise Infeasible(INFEASIBLE_WITHOUT_ZERO_PROB.message)
    return ceiling


def deceptive_synthesis(
    problem: TeamProblem, tol: ToleranceSet = DEFAULT_TOL
) -> SynthesisResult:
    """Minimize the worst-case per-agent divergence meeting the team level.

    Bisects the constraint margin over [0, K_max], then re-solves every
    subproblem at the returned budget to extract policies and occupancies.
    """
    k_max = _resolved_kmax(problem)
    f = lambda k: reach_evaluate(problem.agents, problem.nu_A, k, tol)
    kl_bound = bisection(f, k_max, problem.epsilon)
    sols = [reach_subproblem(a, kl_bound, tol) for a in problem.agents]
    policies = tuple(
        policy_from_occupancy(s.occupancy, a.reference)
        for s, a in zip(sols, problem.agents)
    )
    reaches = tuple(s.reach_value for s in sols)
    return SynthesisResult(
        policies=policies,
        occupancies=tuple(s.occupancy for s in sols),
        kl_bound=kl_bound,
        per_agent_kl=tuple(s.kl_value for s in sols),
        per_agent_reach=reaches,
        disjunctive_reach=disjunctive_reach(reaches),
    )


@dataclass
class _SubsetEvaluation:
    value: float
    kept: Tuple[int, ...]
    excluded: Tuple[int, ...]
    solutions: Tuple[SubproblemSolution, ...]
    overflow: bool  # more decoy-ineligible agents than kept slots


def _subset_evaluation(
    agents: Sequence[AgentSpec], nu_A: float, kl_bound: float, w: int,
    gamma_prime: float, tol: ToleranceSet,
) -> _SubsetEvaluation:
    """Keep ``w`` agents at budget ``kl_bound``; the rest become decoys.

    Agents that cannot attain the decoy divergence kl_bound*gamma_prime are
    kept with priority (they cannot serve as decoys); remaining slots go to
    the largest subproblem reach values, ties to the smaller index. Overflow
    means even the kept slots cannot absorb all ineligible agents.
    """
    n = len(agents)
    if not (1 <= w <= n):
        raise OutOfRange("w", w)
    sols = tuple(reach_subproblem(a, kl_bound, tol) for a in agents)
    level = kl_bound * gamma_prime
    ineligible = [
        max_reach_profile(a).kl + _CEILING_SLACK < level for a in agents
    ]
    order = sorted(
        range(n),
        key=lambda i: (0 if ineligible[i] else 1, -sols[i].reach_value, i),
    )
    kept = tuple(sorted(order[:w]))
    excluded = tuple(sorted(order[w:]))
    value = disjunctive_reach([sols[i].reach_value for i in kept]) - nu_A
    return _SubsetEvaluation(
        value=value,
        kept=kept,
        excluded=excluded,
        solutions=sols,
        overflow=sum(ineligible) > w,
    )


def reach_evaluate_sub(
    agents: Sequence[AgentSpec], nu_A: float, kl_bound: float, w: int,
    gamma_prime: float = 1.0, tol: ToleranceSet = DEFAULT_TOL,
) -> float:
    """Constraint margin when only the ``w`` best-reaching agents count.

    With the default ``gamma_prime`` the decoy-eligibility level coincides
    with the budget itself."""
    return _subset_evaluation(agents, nu_A, kl_bound, w, gamma_prime, tol).value


def subset_search(
    agents: Sequence[AgentSpec], nu_A: float, k_max: float, eps: float, w: int,
    gamma_prime: float = 1.0, tol: ToleranceSet = DEFAULT_TOL,
) -> Tuple[float, bool]:
    """Bisection over the ``w``-kept constraint margin.

    Returns (budget, failed); failed means the margin is still negative at
    the ceiling, in which case the ceiling itself is reported.
    """
    f = lambda k: reach_evaluate_sub(agents, nu_A, k, w, gamma_prime, tol)
    try:
        return bisection(f, k_max, eps), False
    except UpperBoundNotFeasible:
        return k_max, True


def deceptive_subset_selection(
    problem: TeamProblem, tol: ToleranceSet = DEFAULT_TOL
) -> EliminationResult:
    """Sweep the decoy count and pick the allocation the supervisor can least
    afford to defeat.

    Row k keeps n-k agents (budget from subset_search) and prices the decoys
    at budget*gamma_prime; B_k adds the k decoy belief proxies to one kept
    proxy. Rows whose excluded agents cannot attain the decoy divergence are
    marked failed. The best non-failed row wins, ties to fewer decoys.
    """
    agents = problem.agents
    n = len(agents)
    priors = {a.prior for a in agents}
    if len(priors) != 1:
        raise ValidationError("decoy selection requires equal agent priors")
    if len({a.utility for a in agents}) != 1:
        raise ValidationError("decoy selection requires equal agent utilities")
    p = agents[0].prior
    k_max = _resolved_kmax(problem)

    rows: List[Tuple[int, float, float, bool]] = []
    best_k, best_b = None, -math.inf
    evaluations: Dict[int, _SubsetEvaluation] = {}
    for k in range(n):
        budget, failed = subset_search(
            agents, problem.nu_A, k_max, problem.epsilon, n - k,
            problem.gamma_prime, tol,
        )
        if not failed:
            ev = _subset_evaluation(
                agents, problem.nu_A, budget, n - k, problem.gamma_prime, tol
            )
            # a row only counts if every excluded agent can actually play a
            # decoy policy at the elevated divergence
            failed = ev.overflow or ev.value < 0.0
            if not failed:
                evaluations[k] = ev
        if failed:
            rows.append((k, math.nan, budget, True))
            continue
        b_k = k * belief_proxy(p, problem.m_r, budget * problem.gamma_prime) + \
            belief_proxy(p, problem.m_r, budget)
        rows.append((k, b_k, budget, False))
        if b_k > best_b:
            best_k, best_b = k, b_k

    if best_k is None:
        raise AllFailed("every decoy count failed its budget search")

    budget = rows[best_k][2]
    ev = evaluations[best_k]
    decoy_level = budget * problem.gamma_prime
    policies: List[StationaryPolicy] = [None] * n  # type: ignore[list-item]
    for i in ev.kept:
        policies[i] = policy_from_occupancy(
            ev.solutions[i].occupancy, agents[i].reference
        )
    for i in ev.excluded:
        policies[i] = policy_with_kl(agents[i], decoy_level)
    return EliminationResult(
        b_table=tuple(rows),
        k_star=best_k,
        decoy_set=ev.excluded,
        policies=tuple(policies),
        non_decoy_kl=budget,
        decoy_kl=decoy_level,
    )


def kmax_for_decoys(problem: TeamProblem) -> float:
    """Budget beyond which any decoy allocation loses to using none.

    The no-decoy sweep row is worth M(K'_max); a k-decoy row is worth at most
    (n-1) M'(K) + M(K), which strictly decreases in K. Budgets past the
    crossing point cannot beat the no-decoy row, so the crossing bounds the
    sweep. Falls back to n * K'_max if bracketing fails.
    """
    agents = problem.agents
    n = len(agents)
    ceiling = _resolved_kmax(problem)
    if n == 1:
        return ceiling
    p = agents[0].prior
    b0 = belief_proxy(p, problem.m_r, ceiling)

    def f(k: float) -> float:
        return (
            (n - 1) * belief_proxy(p, problem.m_r, k * problem.gamma_prime)
            + belief_proxy(p, problem.m_r, k)
            - b0
        )

    hi = max(ceiling, 1.0)
    for _ in range(200):
        if f(hi) < 0.0:
            break
        hi *= 2.0
    else:  # pragma: no cover - requires pathological parameters
        return n * ceiling
    return float(sopt.brentq(f, 0.0, hi, xtol=1e-12, rtol=8.9e-16, maxiter=200))
