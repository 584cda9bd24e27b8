"""Per-agent convex subproblems over occupancy measures.

The central piece is ``reach_subproblem``: maximize the probability of
reaching the agent's target set subject to a budget on the path-distribution
KL divergence from the reference policy. In occupancy space the divergence is
a sum of relative entropies (perspective form), so the problem is exponential-
cone representable; we model it with cvxpy and solve with CLARABEL, falling
back to SCS.

Mass on induced-chain transitions the reference never takes costs infinite
divergence, so those flows are pinned to zero. The same observation drives
``compute_kmax``: prune every action whose support leaves the reference
chain's support, maximize reachability on what remains, and the divergence of
those maximizing policies bounds the optimal budget from above.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

from .errors import OutOfRange, SolverFailure, TargetUnattainable
from .mdp import (
    Decomposition,
    Mdp,
    StationaryPolicy,
    chain_matrix,
    decompose,
    disjunctive_reach,
    reach_probability,
    validate_mdp,
    validate_policy,
)
from .occupancy import (
    DUST,
    OccupancyVector,
    kl_occupancy,
    occupancy_from_policy,
    occupancy_reach,
    policy_from_occupancy,
)


@dataclass(frozen=True)
class ToleranceSet:
    """Solver tolerances; golden-value comparisons elsewhere use 1e-4."""

    gap: float = 1e-8
    feas: float = 1e-8


DEFAULT_TOL = ToleranceSet()


class InfeasibleWithoutZeroProbTransitions:
    """Marker: the requested team reachability cannot be met by any policies
    that stay absolutely continuous with the references; the agents would need
    transitions of zero reference probability, which the divergence prices at
    +infinity."""

    message = (
        "requested team reachability is unattainable without transitions of "
        "zero reference probability (infinite divergence)"
    )

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "<infeasible without zero-probability transitions>"


INFEASIBLE_WITHOUT_ZERO_PROB = InfeasibleWithoutZeroProbTransitions()


@dataclass
class AgentSpec:
    """One agent: model, supervisor-assigned reference, targets, and metadata.

    ``prior`` is the supervisor's prior deception probability for this agent,
    ``utility`` its elimination cost weight. The state decomposition under the
    reference is computed once and cached here alongside compiled subproblem
    models.
    """

    mdp: Mdp
    reference: StationaryPolicy
    targets: frozenset
    prior: float = 0.5
    utility: float = 1.0
    decomposition: Optional[Decomposition] = None

    def __post_init__(self):
        validate_mdp(self.mdp)
        validate_policy(self.mdp, self.reference)
        if not (0.0 < self.prior < 1.0):
            raise OutOfRange("prior", self.prior)
        if self.utility <= 0.0:
            raise OutOfRange("utility", self.utility)
        self.targets = frozenset(self.targets)
        if self.decomposition is None:
            self.decomposition = decompose(self.mdp, self.reference, self.targets)
        self._models: Dict[str, object] = {}
        self._profile: Optional["MaxReachProfile"] = None

    @property
    def deviation_states(self) -> Tuple:
        return self.decomposition.deviation_states


@dataclass
class SubproblemSolution:
    reach_value: float
    occupancy: OccupancyVector
    kl_value: float
    solver_status: str


# --- model construction -----------------------------------------------------


class _CompiledModel:
    """cvxpy model for one agent, parameterized by the divergence budget."""

    def __init__(self, agent: AgentSpec, with_kl: bool):
        m = agent.mdp
        dev = agent.deviation_states
        ref_chain = chain_matrix(m, agent.reference)
        idx = m.state_index
        pairs = [(s, a) for s in dev for a in m.actions_of[s]]
        pair_index = {p: i for i, p in enumerate(pairs)}
        dev_index = {s: i for i, s in enumerate(dev)}
        n = len(pairs)

        # transition rows (s, q), s deviating, q any successor; split by
        # reference support
        fl_data: Dict[Tuple[int, int], float] = {}
        row_of: Dict[Tuple, int] = {}
        all_rows = []
        for s in dev:
            for q in sorted(m.successors(s), key=lambda t: idx[t]):
                r = len(all_rows)
                all_rows.append((s, q))
                row_of[(s, q)] = r
        for (s, a) in pairs:
            j = pair_index[(s, a)]
            for q, p in m.row(s, a).items():
                fl_data[(row_of[(s, q)], j)] = fl_data.get((row_of[(s, q)], j), 0.0) + p
        ref_probs = np.array([ref_chain[idx[s], idx[q]] for (s, q) in all_rows])
        rows_pos = [r for r, v in enumerate(ref_probs) if v > 0.0]
        rows_zero = [r for r, v in enumerate(ref_probs) if v <= 0.0]

        per_row: Dict[int, list] = {}
        for (rr, j), p in fl_data.items():
            per_row.setdefault(rr, []).append((j, p))

        def selector(rows):
            data, ri, ci = [], [], []
            for out_i, r in enumerate(rows):
                for j, p in per_row.get(r, ()):
                    ri.append(out_i)
                    ci.append(j)
                    data.append(p)
            return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))

        Fl_pos = selector(rows_pos)
        Fl_zero = selector(rows_zero)

        ysel_ri, ysel_ci = [], []
        for out_i, r in enumerate(rows_pos):
            s = all_rows[r][0]
            for a in m.actions_of[s]:
                ysel_ri.append(out_i)
                ysel_ci.append(pair_index[(s, a)])
        Ysel = sp.csr_matrix(
            (np.ones(len(ysel_ri)), (ysel_ri, ysel_ci)), shape=(len(rows_pos), n)
        )

        # flow conservation: out(s) - in(s) = 1{s == s0}
        a_ri, a_ci, a_data = [], [], []
        for (s, a) in pairs:
            j = pair_index[(s, a)]
            a_ri.append(dev_index[s])
            a_ci.append(j)
            a_data.append(1.0)
            for q, p in m.row(s, a).items():
                if q in dev_index:
                    a_ri.append(dev_index[q])
                    a_ci.append(j)
                    a_data.append(-p)
        A_eq = sp.csr_matrix((a_data, (a_ri, a_ci)), shape=(len(dev), n))
        b = np.zeros(len(dev))
        if m.initial_state in dev_index:
            b[dev_index[m.initial_state]] = 1.0

        c = np.zeros(n)
        for (s, a) in pairs:
            j = pair_index[(s, a)]
            c[j] = sum(p for q, p in m.row(s, a).items() if q in agent.targets)

        x = cp.Variable(n, nonneg=True)
        constraints = [A_eq @ x == b]
        if Fl_zero.shape[0]:
            constraints.append(Fl_zero @ x == 0)
        kl_expr = None
        k_param = None
        if with_kl:
            f = Fl_pos @ x
            kl_expr = cp.sum(cp.rel_entr(f, cp.multiply(ref_probs[rows_pos], Ysel @ x)))
            k_param = cp.Parameter(nonneg=True)
            constraints.append(kl_expr <= k_param)
        problem = cp.Problem(cp.Maximize(c @ x), constraints)

        self.agent = agent
        self.pairs = pairs
        self.x = x
        self.k_param = k_param
        self.kl_expr = kl_expr
        self.problem = problem
        self.reach_const = 1.0 if m.initial_state in agent.targets else 0.0

    def solve(self, kl_bound: Optional[float], tol: ToleranceSet) -> SubproblemSolution:
        if self.k_param is not None:
            self.k_param.value = float(kl_bound)
        verbose = bool(os.environ.get("COVERTTEAM_SOLVER_VERBOSE"))
        status = None
        try:
            self.problem.solve(
                solver=cp.CLARABEL,
                verbose=verbose,
                tol_gap_abs=tol.gap,
                tol_gap_rel=tol.gap,
                tol_feas=tol.feas,
            )
            status = self.problem.status
        except (cp.SolverError, cp.error.SolverError):
            status = None
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            try:
                self.problem.solve(solver=cp.SCS, verbose=verbose,
                                   eps_abs=1e-9, eps_rel=1e-9, max_iters=100_000)
                status = self.problem.status
            except (cp.SolverError, cp.error.SolverError):
                status = None
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise SolverFailure(f"subproblem solver status: {status!r}")

        m = self.agent.mdp
        xv = np.asarray(self.x.value, dtype=float).ravel()
        kl_val = 0.0
        if self.kl_expr is not None:
            kl_val = float(self.kl_expr.value)
            if not math.isfinite(kl_val):
                kl_val = float(kl_bound)
        xv = np.where(xv < DUST, 0.0, np.maximum(xv, 0.0))
        entries = {pair: float(v) for pair, v in zip(self.pairs, xv)}
        occ = OccupancyVector(m, self.agent.deviation_states, entries)
        reach = float(self.problem.value) + self.reach_const
        reach = min(max(reach, 0.0), 1.0)
        return SubproblemSolution(
            reach_value=reach,
            occupancy=occ,
            kl_value=max(kl_val, 0.0),
            solver_status="optimal" if status == cp.OPTIMAL else "near_optimal",
        )


def _model(agent: AgentSpec, with_kl: bool) -> _CompiledModel:
    key = "kl" if with_kl else "lp"
    model = agent._models.get(key)
    if model is None:
        model = _CompiledModel(agent, with_kl)
        agent._models[key] = model
    return model  # type: ignore[return-value]


def _reference_solution(agent: AgentSpec) -> SubproblemSolution:
    """Exact divergence-zero point: the reference occupancy itself."""
    occ = occupancy_from_policy(agent.mdp, agent.reference, agent.deviation_states)
    return SubproblemSolution(
        reach_value=occupancy_reach(occ, agent.targets),
        occupancy=occ,
        kl_value=0.0,
        solver_status="optimal",
    )


def reach_subproblem(
    agent: AgentSpec, kl_bound: float, tol: ToleranceSet = DEFAULT_TOL
) -> SubproblemSolution:
    """Maximize target reachability at divergence at most ``kl_bound``.

    ``kl_bound=0`` collapses the feasible set to the reference occupancy and
    is answered analytically; ``kl_bound=inf`` drops the divergence constraint
    (the zero-reference-flow pins stay) and solves the resulting LP.
    """
    if kl_bound < 0.0:
        raise OutOfRange("kl_bound", kl_bound)
    if not agent.deviation_states:
        reach = 1.0 if agent.mdp.initial_state in agent.targets else 0.0
        occ = OccupancyVector(agent.mdp, (), {})
        return SubproblemSolution(reach, occ, 0.0, "optimal")
    if kl_bound == 0.0:
        return _reference_solution(agent)
    if math.isinf(kl_bound):
        return _model(agent, with_kl=False).solve(None, tol)
    return _model(agent, with_kl=True).solve(kl_bound, tol)


# --- divergence budget upper bound -------------------------------------------


@dataclass
class MaxReachProfile:
    """Best reachability attainable without leaving the reference's support."""

    policy: StationaryPolicy
    reach: float
    kl: float


def max_reach_profile(agent: AgentSpec) -> MaxReachProfile:
    """Maximize reachability over policies absolutely continuous with the
    reference (deviating only on deviation states), and report the divergence
    of the maximizing policy. Cached per agent."""
    if agent._profile is not None:
        return agent._profile
    m = agent.mdp
    dec = agent.decomposition
    dev = dec.deviation_states
    idx = m.state_index
    ref_chain = chain_matrix(m, agent.reference)

    allowed: Dict = {}
    for s in dev:
        i = idx[s]
        acts = [
            a
            for a in m.actions_of[s]
            if all(ref_chain[i, idx[q]] > 0.0 for q in m.row(s, a))
        ]
        allowed[s] = acts

    # value iteration for max reachability with pruned action sets;
    # boundary: targets 1, closed classes 0
    val = {s: 0.0 for s in m.states}
    for t in dec.targets:
        val[t] = 1.0
    while True:
        delta = 0.0
        for s in dev:
            best = 0.0
            for a in allowed[s]:
                q_val = sum(p * val[q] for q, p in m.row(s, a).items())
                best = max(best, q_val)
            delta = max(delta, abs(best - val[s]))
            val[s] = best
        if delta < 1e-13:
            break

    # extract a proper maximizer: repeatedly pick states whose optimal action
    # moves toward already-secured states with positive probability
    secured = set(dec.targets)
    choice: Dict = {}
    changed = True
    while changed:
        changed = False
        for s in dev:
            if s in choice or val[s] <= 1e-12:
                continue
            for a in allowed[s]:
                q_val = sum(p * val[q] for q, p in m.row(s, a).items())
                if q_val < val[s] - 1e-9:
                    continue
                if any(q in secured for q in m.row(s, a)):
                    choice[s] = a
                    secured.add(s)
                    changed = True
                    break

    dist = {s: dict(row) for s, row in agent.reference.dist.items()}
    for s, a in choice.items():
        dist[s] = {a: 1.0}
    policy = StationaryPolicy(dist)
    reach = reach_probability(m, policy, agent.targets)
    kl = kl_occupancy(occupancy_from_policy(m, policy, dev), agent.reference)
    agent._profile = MaxReachProfile(policy=policy, reach=reach, kl=kl)
    return agent._profile


def compute_kmax(agents: Sequence[AgentSpec], nu_target: float):
    """Upper bound on the optimal worst-case divergence budget.

    Returns 0.0 when the references alone meet the team reachability level;
    otherwise the largest divergence among the agents' support-preserving
    max-reach policies, when those meet the level; otherwise the infeasibility
    marker (no absolutely continuous policies suffice).
    """
    ref_reach = [
        reach_probability(a.mdp, a.reference, a.targets) for a in agents
    ]
    if disjunctive_reach(ref_reach) >= nu_target - 1e-12:
        return 0.0
    profiles = [max_reach_profile(a) for a in agents]
    if disjunctive_reach([p.reach for p in profiles]) >= nu_target - 1e-12:
        return max(p.kl for p in profiles)
    return INFEASIBLE_WITHOUT_ZERO_PROB


# --- divergence-targeted interpolation ---------------------------------------


def policy_with_kl(
    agent: AgentSpec, target_kl: float, tol: float = 1e-6
) -> StationaryPolicy:
    """A policy whose divergence from the reference equals ``target_kl``.

    Mixes a high-divergence witness with the reference per state and root-finds
    the mixing weight: the divergence is continuous in the weight, zero at the
    reference and at least ``target_kl`` at the witness, so a crossing exists.
    Raises TargetUnattainable when no witness reaches the level.
    """
    if target_kl < 0.0:
        raise OutOfRange("target_kl", target_kl)
    m = agent.mdp
    dev = agent.deviation_states
    if target_kl == 0.0:
        return StationaryPolicy({s: dict(r) for s, r in agent.reference.dist.items()})

    profile = max_reach_profile(agent)
    witness = None
    sol = reach_subproblem(agent, 2.0 * max(profile.kl, target_kl, 1.0))
    cand = policy_from_occupancy(sol.occupancy, agent.reference)
    cand_kl = kl_occupancy(occupancy_from_policy(m, cand, dev), agent.reference)
    if cand_kl >= target_kl:
        witness = cand
    elif profile.kl >= target_kl:
        witness = profile.policy
    if witness is None:
        raise TargetUnattainable(
            f"divergence level {target_kl:.6g} exceeds attainable "
            f"{max(cand_kl, profile.kl):.6g}"
        )

    def mix_kl(lam: float) -> float:
        pol = StationaryPolicy.mix(witness, agent.reference, lam, m.states)
        return kl_occupancy(occupancy_from_policy(m, pol, dev), agent.reference)

    g = lambda lam: mix_kl(lam) - target_kl
    lam = sopt.brentq(g, 0.0, 1.0, xtol=1e-13, rtol=8.9e-16, maxiter=200)
    pol = StationaryPolicy.mix(witness, agent.reference, lam, m.states)
    achieved = mix_kl(lam)
    if abs(achieved - target_kl) > tol:
        raise TargetUnattainable(
            f"root search achieved divergence {achieved:.6g}, "
            f"target {target_kl:.6g}"
        )
    return pol
