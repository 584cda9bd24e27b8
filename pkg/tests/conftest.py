"""Shared fixtures: the small two-route navigation MDP used across the suite.

Layout (initial state s1, target "goal"):

    s1 --a--> s2 (0.9) / s4 (0.1)
    s1 --b--> s2 (0.1) / s4 (0.9)
    s2 --go--> s3 (0.8) / goal (0.2)
    s2 --land--> goal (1.0)
    s3, s4, goal absorbing

Two supervisors' reference routes: ``ref_direct`` plays a then go,
``ref_detour`` plays b then go. Hand-computed facts used as goldens:

* reach(ref_direct) = 0.9 * 0.2 = 0.18,  reach(ref_detour) = 0.1 * 0.2 = 0.02
* disjunctive reach of both = 1 - 0.82*0.98 = 0.1964
* the "land" deviation (a then land) reaches goal w.p. 0.9; its divergence
  from ref_direct is 0.9 * ln 5 (only the s2 row deviates, visited 0.9 often)
"""

from __future__ import annotations

import math

import pytest

from covertteam.mdp import Mdp, StationaryPolicy


def build_two_route_mdp() -> Mdp:
    states = ["s1", "s2", "s3", "s4", "goal"]
    actions = {
        "s1": ["a", "b"],
        "s2": ["go", "land"],
        "s3": ["stay"],
        "s4": ["stay"],
        "goal": ["stay"],
    }
    triples = [
        ("s1", "a", "s2", 0.9),
        ("s1", "a", "s4", 0.1),
        ("s1", "b", "s2", 0.1),
        ("s1", "b", "s4", 0.9),
        ("s2", "go", "s3", 0.8),
        ("s2", "go", "goal", 0.2),
        ("s2", "land", "goal", 1.0),
        ("s3", "stay", "s3", 1.0),
        ("s4", "stay", "s4", 1.0),
        ("goal", "stay", "goal", 1.0),
    ]
    return Mdp(states, actions, triples, "s1")


@pytest.fixture(scope="session")
def two_route() -> Mdp:
    return build_two_route_mdp()


@pytest.fixture(scope="session")
def ref_direct() -> StationaryPolicy:
    return StationaryPolicy.deterministic(
        {"s1": "a", "s2": "go", "s3": "stay", "s4": "stay", "goal": "stay"}
    )


@pytest.fixture(scope="session")
def ref_detour() -> StationaryPolicy:
    return StationaryPolicy.deterministic(
        {"s1": "b", "s2": "go", "s3": "stay", "s4": "stay", "goal": "stay"}
    )


@pytest.fixture(scope="session")
def land_policy() -> StationaryPolicy:
    return StationaryPolicy.deterministic(
        {"s1": "a", "s2": "land", "s3": "stay", "s4": "stay", "goal": "stay"}
    )


LAND_KL = 0.9 * math.log(5.0)
