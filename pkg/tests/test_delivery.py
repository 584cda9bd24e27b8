"""Delivery environment: kernel construction and shortest-path references."""

from __future__ import annotations

import pytest

from covertteam.delivery import (
    DeliveryGraph,
    DeliveryParams,
    UnreachableTarget,
    air,
    build_delivery_mdp,
    ground,
    shortest_path_reference,
)
from covertteam.errors import OutOfRange, UnknownState
from covertteam.mdp import reach_probability, validate_mdp, validate_policy


def triangle() -> DeliveryGraph:
    return DeliveryGraph(
        nodes=("a", "b", "c"),
        edges=(("a", "b"), ("b", "c"), ("a", "c")),
        start="a",
        agent_targets=("c",),
    )


def path_ab() -> DeliveryGraph:
    return DeliveryGraph(nodes=("a", "b"), edges=(("a", "b"),), start="a",
                         agent_targets=("b",))


def test_triangle_goto_row():
    m, _ = build_delivery_mdp(triangle(), DeliveryParams(p_target=0.8, p_land=0.1))
    validate_mdp(m)
    # steering a->b: 0.8 to air:b, 0.1 forced landing, 0.1 drift to the third node
    assert m.prob(air("a"), "goto:b", air("b")) == pytest.approx(0.8)
    assert m.prob(air("a"), "goto:b", ground("a")) == pytest.approx(0.1)
    assert m.prob(air("a"), "goto:b", air("c")) == pytest.approx(0.1)


def test_landing_row_spreads_over_neighbors():
    m, _ = build_delivery_mdp(triangle(), DeliveryParams(p_target=0.8, p_land=0.1))
    assert m.prob(air("a"), "land", ground("a")) == pytest.approx(0.9)
    assert m.prob(air("a"), "land", air("b")) == pytest.approx(0.05)
    assert m.prob(air("a"), "land", air("c")) == pytest.approx(0.05)


def test_degree_one_folds_drift_into_landing():
    m, _ = build_delivery_mdp(path_ab(), DeliveryParams(p_target=0.8, p_land=0.1))
    assert m.prob(air("a"), "goto:b", air("b")) == pytest.approx(0.8)
    assert m.prob(air("a"), "goto:b", ground("a")) == pytest.approx(0.2)


def test_exact_steering_when_no_drift_mass():
    m, _ = build_delivery_mdp(triangle(), DeliveryParams(p_target=0.9, p_land=0.1))
    assert m.prob(air("a"), "goto:b", air("c")) == 0.0
    assert m.prob(air("a"), "goto:b", air("b")) == pytest.approx(0.9)


def test_all_flight_rows_stochastic_on_default_params():
    g = DeliveryGraph(
        nodes=("a", "b", "c", "d", "e"),
        edges=(("a", "b"), ("b", "c"), ("c", "d"), ("b", "e"), ("d", "e")),
        start="a",
        agent_targets=("d",),
    )
    m, targets = build_delivery_mdp(g)
    validate_mdp(m)
    assert targets == frozenset({ground("d")})
    for v in g.nodes:
        assert m.is_absorbing(ground(v))
        assert not m.is_absorbing(air(v))


def test_params_validation():
    with pytest.raises(OutOfRange):
        DeliveryParams(p_target=0.9, p_land=0.2)
    with pytest.raises(OutOfRange):
        DeliveryParams(p_target=-0.1)


def test_graph_validation():
    with pytest.raises(UnknownState):
        DeliveryGraph(nodes=("a",), edges=(("a", "zz"),), start="a", agent_targets=())
    with pytest.raises(OutOfRange):
        # degree-zero node rejected
        DeliveryGraph(nodes=("a", "b", "c"), edges=(("a", "b"),), start="a",
                      agent_targets=())


def test_shortest_path_reference_routes_and_lands():
    g = DeliveryGraph(
        nodes=("a", "b", "c", "d"),
        edges=(("a", "b"), ("b", "c"), ("c", "d")),
        start="a",
        agent_targets=("d",),
    )
    pol = shortest_path_reference(g, "c")
    m, _ = build_delivery_mdp(g)
    validate_policy(m, pol)
    assert pol.prob(air("a"), "goto:b") == 1.0
    assert pol.prob(air("b"), "goto:c") == 1.0
    assert pol.prob(air("c"), "land") == 1.0
    # the reference keeps steering back even off-route
    assert pol.prob(air("d"), "goto:c") == 1.0


def test_shortest_path_lexicographic_tie_break():
    # both b and c are one hop from target d; from a the tie breaks toward b
    g = DeliveryGraph(
        nodes=("a", "b", "c", "d"),
        edges=(("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")),
        start="a",
        agent_targets=("d",),
    )
    pol = shortest_path_reference(g, "d")
    assert pol.prob(air("a"), "goto:b") == 1.0


def test_unreachable_supervisor_target():
    g = DeliveryGraph(
        nodes=("a", "b", "c", "d"),
        edges=(("a", "b"), ("c", "d")),
        start="a",
        agent_targets=("b",),
    )
    with pytest.raises(UnreachableTarget):
        shortest_path_reference(g, "d")


def test_reference_reaches_agent_targets_with_positive_probability():
    # forced landings along the route give the landed agent-target state mass
    g = DeliveryGraph(
        nodes=("a", "b", "c", "d"),
        edges=(("a", "b"), ("b", "c"), ("c", "d")),
        start="a",
        agent_targets=("b",),
    )
    m, targets = build_delivery_mdp(g)
    pol = shortest_path_reference(g, "d")
    p = reach_probability(m, pol, targets)
    assert p > 0.0
    # ... but far less than certain
    assert p < 0.5
