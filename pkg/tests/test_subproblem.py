"""Tests for the per-agent divergence-budgeted reachability subproblem.

Golden values, all hand-derived on the two-route fixture:

* budget 0 pins the reference occupancy: reach 0.18 (direct), 0.02 (detour)
* the land deviation is the unique max-reach policy within the reference's
  support, reach 0.9; its divergence is 0.9 ln 5 from the direct reference
  and 0.8 ln 9 + 0.9 ln 5 from the detour reference (s1 row deviates a-vs-b,
  occupancy 1.0; s2 row deviates land-vs-go with occupancy 0.9)
* mixing the s2 row half-and-half gives reach 0.9 * 0.6 = 0.54 at divergence
  0.9 * (0.4 ln 0.5 + 0.6 ln 3)

The randomized check compares the convex solver against the batched
policy-grid oracle in tests/oracles.py, which shares no code with it.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import LAND_KL, build_two_route_mdp
from oracles import random_small_agent, reach_at_budget

from covertteam.errors import OutOfRange, TargetUnattainable
from covertteam.mdp import Mdp, StationaryPolicy
from covertteam.occupancy import kl_occupancy, occupancy_from_policy, policy_from_occupancy
from covertteam.subproblem import (
    INFEASIBLE_WITHOUT_ZERO_PROB,
    AgentSpec,
    compute_kmax,
    max_reach_profile,
    policy_with_kl,
    reach_subproblem,
)

DETOUR_KL = 0.8 * math.log(9.0) + 0.9 * math.log(5.0)
HALF_MIX_KL = 0.9 * (0.4 * math.log(0.5) + 0.6 * math.log(3.0))
TARGETS = frozenset({"goal"})


@pytest.fixture(scope="module")
def agent_direct(two_route, ref_direct) -> AgentSpec:
    return AgentSpec(mdp=two_route, reference=ref_direct, targets=TARGETS)


@pytest.fixture(scope="module")
def agent_detour(two_route, ref_detour) -> AgentSpec:
    return AgentSpec(mdp=two_route, reference=ref_detour, targets=TARGETS)


# conftest fixtures are session-scoped; redeclare at module scope for specs
@pytest.fixture(scope="module")
def two_route():
    return build_two_route_mdp()


@pytest.fixture(scope="module")
def ref_direct():
    return StationaryPolicy.deterministic(
        {"s1": "a", "s2": "go", "s3": "stay", "s4": "stay", "goal": "stay"}
    )


@pytest.fixture(scope="module")
def ref_detour():
    return StationaryPolicy.deterministic(
        {"s1": "b", "s2": "go", "s3": "stay", "s4": "stay", "goal": "stay"}
    )


def test_budget_zero_is_reference_occupancy(agent_direct):
    sol = reach_subproblem(agent_direct, 0.0)
    assert sol.reach_value == pytest.approx(0.18, abs=1e-12)
    assert sol.kl_value == 0.0
    assert sol.solver_status == "optimal"
    assert sol.occupancy.state_mass("s1") == pytest.approx(1.0, abs=1e-12)
    assert sol.occupancy.state_mass("s2") == pytest.approx(0.9, abs=1e-12)


def test_budget_zero_detour(agent_detour):
    sol = reach_subproblem(agent_detour, 0.0)
    assert sol.reach_value == pytest.approx(0.02, abs=1e-12)


def test_budget_at_land_divergence_reaches_max(agent_direct):
    sol = reach_subproblem(agent_direct, LAND_KL)
    assert sol.reach_value == pytest.approx(0.9, abs=1e-6)
    assert sol.kl_value <= LAND_KL + 1e-7


def test_infinite_budget_is_lp(agent_direct):
    sol = reach_subproblem(agent_direct, math.inf)
    assert sol.reach_value == pytest.approx(0.9, abs=1e-7)
    assert math.isfinite(sol.kl_value)


def test_interior_budget_dominates_mixture_witness(agent_direct):
    # the half-mixed s2 row is feasible at this budget, so the optimum is at
    # least its reach; it cannot beat the overall max
    sol = reach_subproblem(agent_direct, HALF_MIX_KL)
    assert sol.reach_value >= 0.54 - 1e-6
    assert sol.reach_value <= 0.9 + 1e-9
    assert sol.kl_value <= HALF_MIX_KL + 1e-6


def test_reach_monotone_in_budget(agent_direct):
    budgets = [0.0, 0.05, 0.1, 0.3, 0.6, 1.0, LAND_KL, 2.0, math.inf]
    reaches = [reach_subproblem(agent_direct, k).reach_value for k in budgets]
    for lo, hi in zip(reaches, reaches[1:]):
        assert hi >= lo - 1e-7
    assert reaches[0] == pytest.approx(0.18, abs=1e-12)
    assert reaches[-1] == pytest.approx(0.9, abs=1e-7)


def test_solution_internally_consistent(agent_direct):
    for k in (0.3, 1.0):
        sol = reach_subproblem(agent_direct, k)
        # dual route: recompute the divergence from the occupancy itself
        direct_kl = kl_occupancy(sol.occupancy, agent_direct.reference)
        assert direct_kl == pytest.approx(sol.kl_value, abs=1e-4)
        # policy round trip preserves the value
        pol = policy_from_occupancy(sol.occupancy, agent_direct.reference)
        occ2 = occupancy_from_policy(
            agent_direct.mdp, pol, agent_direct.deviation_states
        )
        kl2 = kl_occupancy(occ2, agent_direct.reference)
        assert kl2 == pytest.approx(sol.kl_value, abs=1e-4)
        assert kl2 <= k + 1e-6


def test_negative_budget_rejected(agent_direct):
    with pytest.raises(OutOfRange):
        reach_subproblem(agent_direct, -0.1)


def test_trivial_agent_no_deviation_states():
    m = Mdp(["g"], {"g": ["stay"]}, [("g", "stay", "g", 1.0)], "g")
    ref = StationaryPolicy.deterministic({"g": "stay"})
    spec = AgentSpec(mdp=m, reference=ref, targets=frozenset({"g"}))
    sol = reach_subproblem(spec, 1.0)
    assert sol.reach_value == 1.0
    assert sol.kl_value == 0.0


def test_max_reach_profile_direct(agent_direct):
    prof = max_reach_profile(agent_direct)
    assert prof.reach == pytest.approx(0.9, abs=1e-9)
    assert prof.kl == pytest.approx(LAND_KL, abs=1e-9)
    assert prof.policy.prob("s2", "land") == 1.0
    assert prof.policy.prob("s1", "a") == 1.0


def test_max_reach_profile_detour(agent_detour):
    prof = max_reach_profile(agent_detour)
    assert prof.reach == pytest.approx(0.9, abs=1e-9)
    assert prof.kl == pytest.approx(DETOUR_KL, abs=1e-9)


def test_compute_kmax_pair(agent_direct, agent_detour):
    agents = [agent_direct, agent_detour]
    # references already give 0.1964 jointly
    assert compute_kmax(agents, 0.1) == 0.0
    assert compute_kmax(agents, 0.1964) == 0.0
    # profiles give 1 - 0.1 * 0.1 = 0.99 jointly; worst divergence is detour's
    assert compute_kmax(agents, 0.5) == pytest.approx(DETOUR_KL, abs=1e-9)
    assert compute_kmax(agents, 0.99) == pytest.approx(DETOUR_KL, abs=1e-9)
    # beyond 0.99 nothing absolutely continuous works
    assert compute_kmax(agents, 0.995) is INFEASIBLE_WITHOUT_ZERO_PROB


def test_compute_kmax_prunes_unsupported_actions():
    # the risky action reaches the target surely, but the reference never
    # moves there, so it costs infinite divergence and must be pruned
    m = Mdp(
        ["x", "goal", "dead"],
        {"x": ["safe", "risky"], "goal": ["stay"], "dead": ["stay"]},
        [
            ("x", "safe", "dead", 1.0),
            ("x", "risky", "goal", 1.0),
            ("goal", "stay", "goal", 1.0),
            ("dead", "stay", "dead", 1.0),
        ],
        "x",
    )
    ref = StationaryPolicy.deterministic({"x": "safe", "goal": "stay", "dead": "stay"})
    spec = AgentSpec(mdp=m, reference=ref, targets=frozenset({"goal"}))
    assert max_reach_profile(spec).reach == 0.0
    assert compute_kmax([spec], 0.5) is INFEASIBLE_WITHOUT_ZERO_PROB


def test_policy_with_kl_zero_returns_reference(agent_direct):
    pol = policy_with_kl(agent_direct, 0.0)
    for s in agent_direct.mdp.states:
        for a in agent_direct.mdp.actions_of[s]:
            assert pol.prob(s, a) == agent_direct.reference.prob(s, a)


@pytest.mark.parametrize("target", [0.1, 0.5, LAND_KL * 0.999])
def test_policy_with_kl_hits_target(agent_direct, target):
    pol = policy_with_kl(agent_direct, target)
    occ = occupancy_from_policy(
        agent_direct.mdp, pol, agent_direct.deviation_states
    )
    assert kl_occupancy(occ, agent_direct.reference) == pytest.approx(target, abs=1e-6)


def test_policy_with_kl_detour_beyond_land(agent_detour):
    # above the solver witness's divergence the profile policy is the witness
    target = DETOUR_KL * 0.98
    pol = policy_with_kl(agent_detour, target)
    occ = occupancy_from_policy(
        agent_detour.mdp, pol, agent_detour.deviation_states
    )
    assert kl_occupancy(occ, agent_detour.reference) == pytest.approx(target, abs=1e-6)


def test_policy_with_kl_unattainable(agent_direct):
    with pytest.raises(TargetUnattainable):
        policy_with_kl(agent_direct, 50.0)


def test_solver_matches_policy_grid_oracle():
    rng = np.random.default_rng(20260814)
    for _ in range(3):
        agent = random_small_agent(rng, n_transient=3, resolution=0.05)
        lo, hi = float(np.min(agent.kl)), float(np.max(agent.kl))
        budgets = np.array([lo + f * (hi - lo) for f in (0.15, 0.5, 0.85)])
        grid_best = reach_at_budget(agent, budgets)
        for k, gb in zip(budgets, grid_best):
            sol = reach_subproblem(agent.spec, float(k))
            # every grid policy within budget is feasible for the solver
            assert sol.reach_value >= gb - 1e-6
            # coarse grid: the solver should not be far above the grid's best
            assert sol.reach_value <= gb + 0.1
            assert sol.kl_value <= k + 1e-6
