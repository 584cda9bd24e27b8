"""Delivery-drone benchmark environment.

A drone flies over an undirected graph. Each graph node ``v`` yields two MDP
states: ``air:v`` (in flight above ``v``) and ``ground:v`` (landed at ``v``,
absorbing). In flight the drone either steers toward an adjacent node or tries
to land; wind makes both noisy:

* ``goto:u``  -> ``air:u`` w.p. ``p_target``, forced landing ``ground:v`` w.p.
  ``p_land``, remaining mass spread evenly over the other neighbors of ``v``
  (folded into the forced landing when ``v`` has a single neighbor);
* ``land``    -> ``ground:v`` w.p. ``p_target + p_land``, remaining mass spread
  evenly over all neighbors of ``v``.

The supervisor's reference route follows BFS shortest paths to its designated
landing node and lands there; ties between equally short next hops break
toward the smallest node id (string order).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Tuple

from .errors import OutOfRange, UnknownState, ValidationError
from .mdp import Mdp, StationaryPolicy


class UnreachableTarget(ValidationError):
    def __init__(self, node):
        super().__init__(f"supervisor target {node!r} unreachable from the start node")
        self.node = node


def air(v: str) -> str:
    return f"air:{v}"


def ground(v: str) -> str:
    return f"ground:{v}"


@dataclass(frozen=True)
class DeliveryGraph:
    """Undirected flight graph with the agent's start and the shared targets."""

    nodes: Tuple[str, ...]
    edges: Tuple[Tuple[str, str], ...]
    start: str
    agent_targets: Tuple[str, ...]

    def __post_init__(self):
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise OutOfRange("duplicate node ids", self.nodes)
        for u, v in self.edges:
            if u not in known:
                raise UnknownState(u, "edges")
            if v not in known:
                raise UnknownState(v, "edges")
            if u == v:
                raise OutOfRange("self-loop edge", (u, v))
        if self.start not in known:
            raise UnknownState(self.start, "start")
        for t in self.agent_targets:
            if t not in known:
                raise UnknownState(t, "agent_targets")
        adj: Dict[str, set] = {v: set() for v in self.nodes}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        for v, nbrs in adj.items():
            if not nbrs:
                raise OutOfRange(f"node {v!r} has degree zero; minimum degree is 1", v)
        object.__setattr__(self, "_adj", {v: tuple(sorted(ns)) for v, ns in adj.items()})

    def neighbors(self, v: str) -> Tuple[str, ...]:
        return self._adj[v]  # type: ignore[attr-defined]


@dataclass(frozen=True)
class DeliveryParams:
    p_target: float = 0.8
    p_land: float = 0.05

    def __post_init__(self):
        if self.p_target < 0.0 or self.p_land < 0.0:
            raise OutOfRange("wind probabilities must be nonnegative",
                             (self.p_target, self.p_land))
        if self.p_target + self.p_land > 1.0 + 1e-12:
            raise OutOfRange("p_target + p_land exceeds 1",
                             self.p_target + self.p_land)


def build_delivery_mdp(
    graph: DeliveryGraph, params: DeliveryParams = DeliveryParams()
) -> Tuple[Mdp, FrozenSet[str]]:
    """Expand the graph into the flight MDP.

    Returns the MDP (initial state: in flight above the start node) and the
    agent target set, i.e. the landed states over ``graph.agent_targets``.
    """
    states = [air(v) for v in graph.nodes] + [ground(v) for v in graph.nodes]
    actions = {}
    triples = []
    pt, pl = params.p_target, params.p_land
    spread = 1.0 - pt - pl
    if spread < 1e-12:
        # p_target + p_land ~ 1: no drift mass (guard against float dust)
        spread = 0.0
    for v in graph.nodes:
        nbrs = graph.neighbors(v)
        acts = [f"goto:{u}" for u in nbrs] + ["land"]
        actions[air(v)] = acts
        for u in nbrs:
            a = f"goto:{u}"
            triples.append((air(v), a, air(u), pt))
            others = [w for w in nbrs if w != u]
            if others and spread > 0.0:
                triples.append((air(v), a, ground(v), pl))
                for w in others:
                    triples.append((air(v), a, air(w), spread / len(others)))
            else:
                # single neighbor (or no drift mass): fold the drift into landing
                triples.append((air(v), a, ground(v), pl + spread))
        triples.append((air(v), "land", ground(v), pt + pl))
        if spread > 0.0:
            for u in nbrs:
                triples.append((air(v), "land", air(u), spread / len(nbrs)))
        actions[ground(v)] = ["stay"]
        triples.append((ground(v), "stay", ground(v), 1.0))
    m = Mdp(states, actions, triples, air(graph.start))
    targets = frozenset(ground(t) for t in graph.agent_targets)
    return m, targets


def shortest_path_reference(
    graph: DeliveryGraph, supervisor_target: str
) -> StationaryPolicy:
    """Reference policy: BFS shortest hops toward the supervisor's landing node.

    Above the target node the reference lands; above any other node it steers
    to the neighbor one BFS level closer (smallest id on ties). Raises
    UnreachableTarget when no route exists from the start node.
    """
    if supervisor_target not in set(graph.nodes):
        raise UnknownState(supervisor_target, "supervisor_target")
    dist: Dict[str, int] = {supervisor_target: 0}
    dq = deque([supervisor_target])
    while dq:
        v = dq.popleft()
        for u in graph.neighbors(v):
            if u not in dist:
                dist[u] = dist[v] + 1
                dq.append(u)
    if graph.start not in dist:
        raise UnreachableTarget(supervisor_target)
    dist_of = lambda u: dist.get(u, None)
    pol: Dict[str, Dict[str, float]] = {}
    for v in graph.nodes:
        if v == supervisor_target or v not in dist:
            pol[air(v)] = {"land": 1.0}
        else:
            dv = dist[v]
            nxt = min(u for u in graph.neighbors(v)
                      if dist_of(u) is not None and dist_of(u) == dv - 1)
            pol[air(v)] = {f"goto:{nxt}": 1.0}
        pol[ground(v)] = {"stay": 1.0}
    return StationaryPolicy(pol)
