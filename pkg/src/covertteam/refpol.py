"""Supervisor-side reference synthesis: make deception expensive.

The supervisor chooses the references the agents will later deviate from,
so it can shape the deception landscape before the agents optimize. This
module ascends the agents' optimal worst-case divergence (the value
returned by the team synthesis) over reference-policy space, keeping every
reference above its own task reachability threshold.

The outer problem is NP-hard already for one agent, so the loop is a
heuristic: finite-difference ascent in logit coordinates with a max-oracle
inner solve, monotone step acceptance, and a best-iterate return.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np
from scipy.special import logsumexp

from .errors import (
    Infeasible,
    InfeasibleSupervisorTask,
    InnerSolverFailure,
    NonAbsorbingTarget,
    OutOfRange,
    SolverFailure,
    UnknownState,
    ValidationError,
)
from .mdp import Mdp, State, StationaryPolicy, reach_probability
from .occupancy import OccupancyVector, occupancy_from_policy, policy_from_occupancy
from .subproblem import DEFAULT_TOL, AgentSpec, ToleranceSet
from .synthesis import TeamProblem, deceptive_synthesis

_FD_STEP = 1e-4  # central-difference half width, logit units
_PROBE_EPS = 1e-6  # inner bisection tolerance during the ascent, see below
_INTERIOR_FLOOR = 0.02
_LOGIT_FLOOR = 1e-6
_ACCEPT_SLACK = 1e-12


@dataclass
class SupervisorTask:
    """Per-agent task reachability duties plus the ascent knobs.

    ``supervisor_targets[i]`` and ``thresholds[i]`` constrain agent i's
    reference; the remaining fields tune the heuristic loop (the source
    problem statement fixes none of them, so they are exposed here).
    """

    supervisor_targets: Sequence[frozenset]
    thresholds: Sequence[float]
    iterations: int = 50
    step_size: float = 0.5
    smoothing_temperature: float = 0.1

    def __post_init__(self):
        self.supervisor_targets = tuple(
            frozenset(t) for t in self.supervisor_targets
        )
        self.thresholds = tuple(float(v) for v in self.thresholds)
        if len(self.supervisor_targets) != len(self.thresholds):
            raise ValidationError(
                "supervisor_targets and thresholds must have equal length"
            )
        for i, nu in enumerate(self.thresholds):
            if not (0.0 <= nu <= 1.0):
                raise OutOfRange(f"thresholds[{i}]", nu)
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise OutOfRange("iterations", self.iterations)
        self.iterations = int(self.iterations)
        if self.step_size <= 0.0:
            raise OutOfRange("step_size", self.step_size)
        if self.smoothing_temperature <= 0.0:
            raise OutOfRange("smoothing_temperature", self.smoothing_temperature)


def smoothed_worst_kl(kl_values: Sequence[float], tau: float) -> float:
    """Shifted log-sum-exp relaxation of the worst per-agent divergence.

    Returns tau*log(sum_i exp(kl_i/tau)) - tau*log(n); equal inputs map to
    themselves exactly and max(kl) <= value + tau*log(n).
    """
    if tau <= 0.0:
        raise OutOfRange("smoothing_temperature", tau)
    vals = np.asarray(list(kl_values), dtype=float)
    if vals.size == 0:
        raise OutOfRange("kl_values length", 0)
    if np.any(np.isinf(vals)):
        return math.inf
    return float(tau * (logsumexp(vals / tau) - math.log(vals.size)))


# --- optimal reachability over all policies ---------------------------------


def _max_reach_value(m: Mdp, targets: frozenset) -> float:
    """max_pi Pr(s0 |= eventually targets), by value iteration from below."""
    v = np.zeros(m.n_states)
    for s in targets:
        if s not in m.state_index:
            raise UnknownState(s, "supervisor target")
        v[m.state_index[s]] = 1.0
    rows = [
        (m.state_index[s], [list(m.row(s, a).items()) for a in m.actions_of[s]])
        for s in m.states
        if s not in targets
    ]
    while True:
        delta = 0.0
        for i, action_rows in rows:
            best = 0.0
            for row in action_rows:
                tot = sum(p * v[m.state_index[q]] for q, p in row)
                if tot > best:
                    best = tot
            if best > v[i]:
                delta = max(delta, best - v[i])
                v[i] = best
        if delta < 1e-13:
            return float(v[m.state_index[m.initial_state]])


# --- logit parameterization --------------------------------------------------


@dataclass
class _LogitCoords:
    """Coordinates over the controllable rows of one agent's reference."""

    mdp: Mdp
    rows: Tuple[Tuple[State, Tuple[str, ...]], ...]
    fixed: Dict[State, Dict[str, float]]

    @classmethod
    def build(cls, m: Mdp, pol: StationaryPolicy) -> "_LogitCoords":
        rows = []
        fixed: Dict[State, Dict[str, float]] = {}
        for s in m.states:
            acts = m.actions_of[s]
            if m.is_absorbing(s) or len(acts) < 2:
                fixed[s] = dict(pol.dist[s])
            else:
                rows.append((s, tuple(acts)))
        return cls(m, tuple(rows), fixed)

    @property
    def size(self) -> int:
        return sum(len(acts) for _s, acts in self.rows)

    def from_policy(self, pol: StationaryPolicy) -> np.ndarray:
        z = np.empty(self.size)
        k = 0
        for s, acts in self.rows:
            for a in acts:
                z[k] = math.log(max(pol.prob(s, a), _LOGIT_FLOOR))
                k += 1
        return z

    def to_policy(self, z: np.ndarray) -> StationaryPolicy:
        dist: Dict[State, Dict[str, float]] = {
            s: dict(row) for s, row in self.fixed.items()
        }
        k = 0
        for s, acts in self.rows:
            block = z[k : k + len(acts)]
            k += len(acts)
            w = np.exp(block - block.max())
            w /= w.sum()
            dist[s] = {a: float(p) for a, p in zip(acts, w)}
        return StationaryPolicy(dist)


def _interior_policy(m: Mdp, pol: StationaryPolicy) -> StationaryPolicy:
    """Mix a floor into every controllable row so logits are well defined."""
    dist: Dict[State, Dict[str, float]] = {}
    for s in m.states:
        acts = m.actions_of[s]
        if m.is_absorbing(s) or len(acts) < 2:
            dist[s] = dict(pol.dist[s])
            continue
        row = {a: pol.prob(s, a) + _INTERIOR_FLOOR for a in acts}
        z = sum(row.values())
        dist[s] = {a: p / z for a, p in row.items()}
    return StationaryPolicy(dist)


# --- Euclidean projection in occupancy space ---------------------------------


@dataclass
class _ProjectionModel:
    """Reusable QP: min ||x - x_tilde||^2 over feasible reference occupancies.

    Feasible means flow conservation on the controllable states, elementwise
    nonnegativity, and at least ``nu_s`` mass flowing into the supervisor
    targets. The reach constraint is linear here, which is the point of
    working in occupancy space.
    """

    mdp: Mdp
    dev: Tuple[State, ...]
    pairs: List[Tuple[State, str]]
    x: cp.Variable
    target: cp.Parameter
    problem: cp.Problem

    @classmethod
    def build(
        cls, m: Mdp, targets: frozenset, nu_s: float
    ) -> "_ProjectionModel":
        dev = tuple(s for s in m.states if not m.is_absorbing(s))
        pairs = [(s, a) for s in dev for a in m.actions_of[s]]
        pair_index = {p: i for i, p in enumerate(pairs)}
        dev_index = {s: i for i, s in enumerate(dev)}
        n = len(pairs)

        a_eq = np.zeros((len(dev), n))
        c = np.zeros(n)
        for (s, a) in pairs:
            j = pair_index[(s, a)]
            a_eq[dev_index[s], j] += 1.0
            for q, p in m.row(s, a).items():
                if q in dev_index:
                    a_eq[dev_index[q], j] -= p
                if q in targets:
                    c[j] += p
        b = np.zeros(len(dev))
        if m.initial_state in dev_index:
            b[dev_index[m.initial_state]] = 1.0
        base_reach = 1.0 if m.initial_state in targets else 0.0

        x = cp.Variable(n, nonneg=True)
        target = cp.Parameter(n)
        constraints = [a_eq @ x == b, c @ x + base_reach >= nu_s]
        problem = cp.Problem(cp.Minimize(cp.sum_squares(x - target)), constraints)
        return cls(m, dev, pairs, x, target, problem)

    def project(
        self, candidate: StationaryPolicy, tol: ToleranceSet
    ) -> StationaryPolicy:
        occ = occupancy_from_policy(self.mdp, candidate, self.dev)
        self.target.value = np.array(
            [occ.entries.get(p, 0.0) for p in self.pairs]
        )
        status = None
        try:
            self.problem.solve(
                solver=cp.CLARABEL,
                tol_gap_abs=tol.gap,
                tol_gap_rel=tol.gap,
                tol_feas=tol.feas,
            )
            status = self.problem.status
        except (cp.SolverError, cp.error.SolverError):
            status = None
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            try:
                self.problem.solve(solver=cp.SCS, eps_abs=1e-9, eps_rel=1e-9,
                                   max_iters=100_000)
                status = self.problem.status
            except (cp.SolverError, cp.error.SolverError):
                status = None
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise InnerSolverFailure(f"reference projection status: {status!r}")
        xv = np.maximum(np.asarray(self.x.value, dtype=float).ravel(), 0.0)
        entries = {pair: float(v) for pair, v in zip(self.pairs, xv)}
        projected = OccupancyVector(self.mdp, self.dev, entries)
        return policy_from_occupancy(projected, candidate)


# --- the ascent loop ----------------------------------------------------------


@dataclass
class _Candidate:
    objective: float
    policies: Tuple[StationaryPolicy, ...]


def _team_objective(
    specs: Sequence[AgentSpec], nu_A: float, eps: float, tau: float,
    tol: ToleranceSet,
) -> float:
    """Smoothed inner optimum for one reference profile; +inf if the agents
    cannot meet their level without zero-reference-probability transitions."""
    try:
        result = deceptive_synthesis(
            TeamProblem(agents=list(specs), nu_A=nu_A, epsilon=eps), tol
        )
    except Infeasible:
        return math.inf
    except SolverFailure as exc:
        raise InnerSolverFailure(str(exc)) from exc
    return smoothed_worst_kl(result.per_agent_kl, tau)


def synthesize_reference(
    agents: Sequence[AgentSpec],
    task: SupervisorTask,
    nu_A: float,
    eps: float = 1e-3,
    tol: ToleranceSet = DEFAULT_TOL,
    trace_sink: Optional[List[Tuple[int, float, bool]]] = None,
) -> List[StationaryPolicy]:
    """Ascend the agents' optimal worst-case divergence over references.

    Each iteration runs the inner team synthesis as a max-oracle, estimates
    the ascent direction by central finite differences in logit coordinates,
    steps, and projects every reference back onto {simplex, task reach >=
    threshold} by a Euclidean projection in occupancy space. Steps are
    accepted only when the smoothed objective does not decrease; the best
    iterate overall is returned. No optimality guarantee.

    ``trace_sink``, when given, receives one ``(iteration, objective,
    accepted)`` row per evaluated step for diagnostics. An infinite
    objective means the agents have no finite-divergence deviation at all;
    the loop stops there since no reference can beat unbounded cost.

    Inner synthesis runs at ``min(eps, 1e-6)``: the bisection quantizes the
    inner optimum in steps of its tolerance, and the finite differences can
    only see past that staircase when it is much narrower than the probe
    width. Initial references are first mixed with a 2% uniform floor on
    controllable rows, otherwise deterministic starts saturate the logits
    and every gradient estimate is numerically zero.
    """
    if len(agents) != len(task.supervisor_targets):
        raise ValidationError("task does not cover every agent")
    if not (0.0 <= nu_A <= 1.0):
        raise OutOfRange("nu_A", nu_A)
    if eps <= 0.0:
        raise OutOfRange("eps", eps)

    for i, agent in enumerate(agents):
        for s in task.supervisor_targets[i]:
            if s not in agent.mdp.state_index:
                raise UnknownState(s, "supervisor target")
            if not agent.mdp.is_absorbing(s):
                raise NonAbsorbingTarget(s)
        attainable = _max_reach_value(agent.mdp, task.supervisor_targets[i])
        if attainable < task.thresholds[i] - 1e-9:
            raise InfeasibleSupervisorTask(
                f"agent {i}: optimal reach {attainable:.6g} is below the "
                f"threshold {task.thresholds[i]:.6g}"
            )

    if task.iterations == 0:
        return [a.reference for a in agents]

    tau = task.smoothing_temperature
    eps_inner = min(eps, _PROBE_EPS)
    mdps = [a.mdp for a in agents]
    targets_A = [a.targets for a in agents]

    def specs_for(policies: Sequence[StationaryPolicy]) -> List[AgentSpec]:
        return [
            AgentSpec(m, pol, tg)
            for m, pol, tg in zip(mdps, policies, targets_A)
        ]

    candidates: List[_Candidate] = []

    # the raw initial profile competes whenever it already meets the task
    initial = tuple(a.reference for a in agents)
    if all(
        reach_probability(m, pol, task.supervisor_targets[i])
        >= task.thresholds[i] - 1e-9
        for i, (m, pol) in enumerate(zip(mdps, initial))
    ):
        f_initial = _team_objective(agents, nu_A, eps_inner, tau, tol)
        if math.isinf(f_initial):
            # the agents cannot deviate at finite divergence; no reference
            # beats unbounded deceptive cost, so stop here
            if trace_sink is not None:
                trace_sink.append((0, f_initial, True))
            return list(initial)
        candidates.append(_Candidate(f_initial, initial))

    coords = [_LogitCoords.build(m, pol) for m, pol in zip(mdps, initial)]
    projections = [
        _ProjectionModel.build(m, task.supervisor_targets[i], task.thresholds[i])
        for i, m in enumerate(mdps)
    ]

    def project_all(policies: Sequence[StationaryPolicy]) -> Tuple[StationaryPolicy, ...]:
        return tuple(
            proj.project(pol, tol) for proj, pol in zip(projections, policies)
        )

    current = project_all(
        [_interior_policy(m, pol) for m, pol in zip(mdps, initial)]
    )
    current_specs = specs_for(current)
    f_current = _team_objective(current_specs, nu_A, eps_inner, tau, tol)
    candidates.append(_Candidate(f_current, current))
    if trace_sink is not None:
        trace_sink.append((0, f_current, True))

    sizes = [c.size for c in coords]
    for it in range(1, task.iterations + 1):
        if math.isinf(f_current):
            break  # deception already unboundedly expensive

        z = [c.from_policy(pol) for c, pol in zip(coords, current)]
        grad = [np.zeros(k) for k in sizes]
        cap = f_current + 1.0  # keeps infinite probes from breaking the FD math
        for i in range(len(agents)):
            for j in range(sizes[i]):
                probes = []
                for sign in (+1.0, -1.0):
                    z_probe = z[i].copy()
                    z_probe[j] += sign * _FD_STEP
                    probe_specs = list(current_specs)
                    probe_specs[i] = AgentSpec(
                        mdps[i], coords[i].to_policy(z_probe), targets_A[i]
                    )
                    probes.append(
                        min(_team_objective(probe_specs, nu_A, eps_inner, tau, tol), cap)
                    )
                grad[i][j] = (probes[0] - probes[1]) / (2.0 * _FD_STEP)

        scale = max(float(np.max(np.abs(g))) if g.size else 0.0 for g in grad)
        if scale <= 0.0:
            if trace_sink is not None:
                trace_sink.append((it, f_current, False))
            break  # flat to FD resolution, nothing to ascend

        # backtracking keeps accepted objectives non-decreasing
        accepted = False
        for shrink in (1.0, 0.5, 0.25, 0.125):
            step = task.step_size * shrink / scale
            trial = project_all(
                [
                    coords[i].to_policy(z[i] + step * grad[i])
                    for i in range(len(agents))
                ]
            )
            trial_specs = specs_for(trial)
            f_trial = _team_objective(trial_specs, nu_A, eps_inner, tau, tol)
            if f_trial >= f_current - _ACCEPT_SLACK:
                current, current_specs, f_current = trial, trial_specs, f_trial
                candidates.append(_Candidate(f_current, current))
                accepted = True
                break
        if trace_sink is not None:
            trace_sink.append((it, f_current if accepted else math.nan, accepted))
        if not accepted:
            break  # deterministic loop would repeat the same rejection

    best = max(candidates, key=lambda c: c.objective)
    return list(best.policies)
