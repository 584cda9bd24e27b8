"""Independent oracles used by the test suite.

The grid oracle evaluates every policy on a dense per-state mixture grid with
batched numpy linear algebra: occupancy from a direct linear solve of the
restricted chain, divergence from the induced-chain definition, reachability
from accumulated flows. It shares no code with the package's convex-program
path, so agreement between the two is meaningful.

Random instances keep every action at least 20% likely to absorb, so every
grid policy is proper (finite occupancy) and references are interior (full
support chains, no pruning effects).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from covertteam.mdp import Mdp, StationaryPolicy
from covertteam.subproblem import AgentSpec


@dataclass
class GridAgent:
    """A small two-action agent plus its dense policy-grid evaluation."""

    spec: AgentSpec
    kl: np.ndarray      # divergence of every grid policy
    reach: np.ndarray   # reachability of every grid policy
    weights: np.ndarray  # (G, d) weight on the first action per state


def random_small_agent(
    rng: np.random.Generator, n_transient: int = 3, resolution: float = 0.01
) -> GridAgent:
    """Random agent with ``n_transient`` deviation states and two actions each."""
    d = n_transient
    names = [f"t{i}" for i in range(d)] + ["goal", "dead"]
    n = d + 2

    # kernels: per action, rows over transient states; >= 0.2 mass straight
    # to the absorbing pair keeps every policy proper
    P = np.zeros((2, d, n))
    for a in range(2):
        for i in range(d):
            w = rng.random(d) + 0.05
            w *= 0.8 / w.sum()
            ab = rng.random(2) + 0.05
            ab *= (1.0 - w.sum()) / ab.sum()
            P[a, i, :] = np.concatenate([w, ab])
    actions = {names[i]: ["a0", "a1"] for i in range(d)}
    actions["goal"] = ["stay"]
    actions["dead"] = ["stay"]
    triples = []
    for a in range(2):
        for i in range(d):
            for j in range(n):
                if P[a, i, j] > 0:
                    triples.append((names[i], f"a{a}", names[j], float(P[a, i, j])))
    triples.append(("goal", "stay", "goal", 1.0))
    triples.append(("dead", "stay", "dead", 1.0))
    m = Mdp(names, actions, triples, "t0")

    ref_w = rng.uniform(0.2, 0.8, size=d)
    ref = StationaryPolicy(
        {
            **{names[i]: {"a0": float(ref_w[i]), "a1": float(1.0 - ref_w[i])} for i in range(d)},
            "goal": {"stay": 1.0},
            "dead": {"stay": 1.0},
        }
    )
    spec = AgentSpec(mdp=m, reference=ref, targets=frozenset({"goal"}))

    # dense policy grid: weight on a0 per transient state
    axis = np.linspace(0.0, 1.0, int(round(1.0 / resolution)) + 1)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    kl, reach = _batch_eval(P, ref_w, mesh)
    return GridAgent(spec=spec, kl=kl, reach=reach, weights=mesh)


def _batch_eval(P: np.ndarray, ref_w: np.ndarray, W: np.ndarray):
    """Vectorized occupancy, divergence, reachability for all grid policies."""
    d = P.shape[1]
    n = P.shape[2]
    G = W.shape[0]
    # chains: (G, d, n)
    C = W[:, :, None] * P[0][None] + (1.0 - W[:, :, None]) * P[1][None]
    R = ref_w[:, None] * P[0] + (1.0 - ref_w[:, None]) * P[1]  # (d, n)

    Q = C[:, :, :d]
    A = np.broadcast_to(np.eye(d), (G, d, d)) - np.transpose(Q, (0, 2, 1))
    e0 = np.zeros(d)
    e0[0] = 1.0
    y = np.linalg.solve(A, np.broadcast_to(e0, (G, d))[..., None])[..., 0]  # (G, d)

    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(C > 0.0, np.log(np.where(C > 0.0, C, 1.0) / R[None]), 0.0)
    row_kl = (C * logs).sum(axis=2)  # (G, d)
    kl = (y * row_kl).sum(axis=1)
    reach = (y * C[:, :, d]).sum(axis=1)
    return kl, reach


def reach_at_budget(agent: GridAgent, budgets: np.ndarray) -> np.ndarray:
    """Step function: best grid reachability with divergence within budget."""
    order = np.argsort(agent.kl, kind="stable")
    kl_sorted = agent.kl[order]
    reach_cummax = np.maximum.accumulate(agent.reach[order])
    pos = np.searchsorted(kl_sorted, budgets, side="right") - 1
    out = np.full(len(budgets), -np.inf)
    ok = pos >= 0
    out[ok] = reach_cummax[pos[ok]]
    return out


def grid_optimal_budget(agents: List[GridAgent], nu_team: float) -> float:
    """Smallest worst-agent divergence over the joint grid meeting ``nu_team``.

    Candidate budgets are the grid policies' own divergences; for each
    candidate K the best reach of each agent within K combines disjunctively.
    """
    candidates = np.unique(np.concatenate([a.kl for a in agents]))
    per_agent = [reach_at_budget(a, candidates) for a in agents]
    miss = np.ones(len(candidates))
    for pa in per_agent:
        miss *= 1.0 - np.where(np.isfinite(pa), pa, 0.0)
    feasible = (1.0 - miss) >= nu_team
    if not feasible.any():
        return float("inf")
    return float(candidates[np.argmax(feasible)])


def random_team(
    rng: np.random.Generator, n_agents: int = 2, n_transient: int = 3,
    resolution: float = 0.01
) -> Tuple[List[GridAgent], float]:
    """Random team plus a reachability level strictly between the references'
    joint reach and the grid's best joint reach."""
    agents = [random_small_agent(rng, n_transient, resolution) for _ in range(n_agents)]
    ref_reach = []
    for a in agents:
        # reference sits on the grid only approximately; evaluate it directly
        w_ref = _ref_weights_of(a)
        _, reach_ref = _batch_eval(_kernels_of(a), w_ref, w_ref[None, :])
        ref_reach.append(float(reach_ref[0]))
    miss_ref = np.prod([1.0 - r for r in ref_reach])
    best = [float(np.max(a.reach)) for a in agents]
    miss_best = np.prod([1.0 - r for r in best])
    lo = 1.0 - miss_ref
    hi = 1.0 - miss_best
    nu_team = lo + 0.6 * (hi - lo)
    return agents, float(nu_team)


def _kernels_of(agent: GridAgent) -> np.ndarray:
    m = agent.spec.mdp
    d = len(agent.spec.deviation_states)
    n = m.n_states
    P = np.zeros((2, d, n))
    for i, s in enumerate(agent.spec.deviation_states):
        for a_i, a in enumerate(m.actions_of[s]):
            for q, p in m.row(s, a).items():
                P[a_i, i, m.state_index[q]] = p
    return P


def _ref_weights_of(agent: GridAgent) -> np.ndarray:
    spec = agent.spec
    return np.array(
        [spec.reference.prob(s, "a0") for s in spec.deviation_states]
    )
