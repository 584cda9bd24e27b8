"""Deceptive policy synthesis for supervised MDP teams.

A team of agents, each assigned a reference policy by a supervisor, wants at
least one member to reach an adversarial target set while the team's
trajectories stay statistically close to the references. The package provides:

* occupancy-measure machinery and the path-distribution KL divergence,
* the worst-case synthesis loop (bisection over a disjunctive reachability
  residual with per-agent convex subproblems),
* decoy-count selection against a Bayesian supervisor that eliminates agents
  under an inspection budget, and
* a delivery-drone benchmark environment, Monte-Carlo simulation, reference
  policy search, and a CLI tying it all together.
"""

from .errors import CovertTeamError
from .mdp import (
    Decomposition,
    Mdp,
    StationaryPolicy,
    decompose,
    disjunctive_reach,
    induced_chain,
    reach_probability,
    validate_mdp,
)
from .occupancy import (
    OccupancyVector,
    PathRecord,
    kl_occupancy,
    occupancy_from_policy,
    path_llr,
    policy_from_occupancy,
)

__version__ = "0.1.0"

__all__ = [
    "CovertTeamError",
    "Decomposition",
    "Mdp",
    "OccupancyVector",
    "PathRecord",
    "StationaryPolicy",
    "decompose",
    "disjunctive_reach",
    "induced_chain",
    "kl_occupancy",
    "occupancy_from_policy",
    "path_llr",
    "policy_from_occupancy",
    "reach_probability",
    "validate_mdp",
    "__version__",
]
