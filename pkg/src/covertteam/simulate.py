"""Monte-Carlo execution of the team lifecycle.

Each episode samples the agreed number of paths per agent, shows them to the
supervisor (belief updates over state transitions), runs budgeted greedy
elimination, and scores whether a surviving agent's path reached its targets.

Sampling goes through a compiled kernel when the extension built; the pure
Python kernel draws from the identical uniform stream, so results match
bit for bit either way. Set COVERTTEAM_PURE_PYTHON=1 to force the fallback.

Reproducibility: every (episode, agent, round) gets its own counter-based
substream derived from the caller's seed, so outcomes are independent of
evaluation order and stable across runs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._pathtable import SamplingTable, build_table, sample_paths_py
from .errors import InfiniteLLR, OutOfRange
from .mdp import Mdp, StationaryPolicy, chain_matrix, validate_policy
from .occupancy import PathRecord
from .subproblem import AgentSpec
from .supervisor import belief_update, eliminate_greedy
from .synthesis import TeamProblem

try:  # pragma: no cover - exercised via the env toggle
    from . import _pathkernel as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

MAX_STEPS_DEFAULT = 100_000


def using_compiled_kernel() -> bool:
    """True when path sampling will use the compiled extension."""
    if os.environ.get("COVERTTEAM_PURE_PYTHON"):
        return False
    return _compiled is not None


def _draw(table: SamplingTable, rng: np.random.Generator, n: int, max_steps: int):
    if using_compiled_kernel():
        flat, offsets, truncated = _compiled.sample_paths(
            table, rng.bit_generator, n, max_steps
        )
        return flat, offsets, truncated.astype(bool)
    return sample_paths_py(table, rng, n, max_steps)


def _seed_tuple(seed) -> Tuple[int, ...]:
    if isinstance(seed, (tuple, list)):
        return tuple(int(v) for v in seed)
    return (int(seed),)


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_seed_tuple(seed))))


def sample_path(
    m: Mdp, pol: StationaryPolicy, seed, max_steps: int = MAX_STEPS_DEFAULT
) -> PathRecord:
    """One trajectory from the initial state until absorption or ``max_steps``."""
    validate_policy(m, pol)
    if max_steps < 0:
        raise OutOfRange("max_steps", max_steps)
    table = build_table(m, pol)
    rng = _generator(seed)
    flat, offsets, truncated = _draw(table, rng, 1, max_steps)
    states = tuple(table.states[k] for k in flat[offsets[0]: offsets[1]])
    return PathRecord(states=states, truncated=bool(truncated[0]))


@dataclass(frozen=True)
class EpisodeOutcome:
    """One episode: observed paths, posterior beliefs, elimination, success."""

    paths: Tuple[Tuple[PathRecord, ...], ...]
    beliefs: Tuple[float, ...]
    eliminated: frozenset
    survivor_success: bool
    seed: Tuple[int, ...]


@dataclass
class _AgentContext:
    table: SamplingTable
    chains: Tuple[np.ndarray, np.ndarray]  # (deviating, reference)


def _contexts_for(
    agents: Sequence[AgentSpec], policies: Sequence[StationaryPolicy]
) -> List[_AgentContext]:
    out = []
    for agent, pol in zip(agents, policies):
        validate_policy(agent.mdp, pol)
        out.append(
            _AgentContext(
                table=build_table(agent.mdp, pol),
                chains=(chain_matrix(agent.mdp, pol), chain_matrix(agent.mdp, agent.reference)),
            )
        )
    return out


def run_episode(
    problem: TeamProblem,
    policies: Sequence[StationaryPolicy],
    capacity: float,
    seed,
    max_steps: int = MAX_STEPS_DEFAULT,
    _contexts: Optional[List[_AgentContext]] = None,
) -> EpisodeOutcome:
    """Sample one episode and run the supervisor's elimination once.

    Truncated paths are excluded from belief updates (the supervisor never
    saw them absorb) and count as task failures for their agent.
    """
    agents = problem.agents
    if len(policies) != len(agents):
        raise OutOfRange("policies length", len(policies))
    base = _seed_tuple(seed)
    contexts = _contexts if _contexts is not None else _contexts_for(agents, policies)

    all_paths: List[Tuple[PathRecord, ...]] = []
    beliefs: List[float] = []
    for i, (agent, ctx) in enumerate(zip(agents, contexts)):
        rounds: List[PathRecord] = []
        for r in range(problem.m_r):
            rng = np.random.Generator(
                np.random.Philox(np.random.SeedSequence(base + (i, r)))
            )
            flat, offsets, truncated = _draw(ctx.table, rng, 1, max_steps)
            states = tuple(ctx.table.states[k] for k in flat)
            rounds.append(PathRecord(states=states, truncated=bool(truncated[0])))
        all_paths.append(tuple(rounds))
        observed = [p for p in rounds if not p.truncated]
        beliefs.append(
            belief_update(
                agent.prior, observed, policies[i], agent.reference, agent.mdp,
                _chains=ctx.chains,
            )
        )

    eliminated = eliminate_greedy(beliefs, capacity)
    success = False
    for i, agent in enumerate(agents):
        if i in eliminated:
            continue
        for p in all_paths[i]:
            if not p.truncated and p.states[-1] in agent.targets:
                success = True
                break
        if success:
            break
    return EpisodeOutcome(
        paths=tuple(all_paths),
        beliefs=tuple(beliefs),
        eliminated=eliminated,
        survivor_success=success,
        seed=base,
    )


#: Number of uniform belief-histogram bins over [0, 1].
BELIEF_BINS = 10


@dataclass(frozen=True)
class SimulationSummary:
    """Aggregates over independent episodes.

    ``belief_histogram[i][b]`` counts episodes whose posterior for agent i
    fell in bin b of ``BELIEF_BINS`` uniform bins over [0, 1] (final bin
    closed at 1).
    """

    episodes: int
    success_rate: float
    mean_beliefs: Tuple[float, ...]
    belief_histogram: Tuple[Tuple[int, ...], ...]
    elimination_frequency: Tuple[float, ...]
    truncated_paths: int
    seed: Tuple[int, ...]


def simulate_episodes(
    problem: TeamProblem,
    policies: Sequence[StationaryPolicy],
    capacity: float,
    episodes: int,
    seed,
    max_steps: int = MAX_STEPS_DEFAULT,
) -> SimulationSummary:
    """Run ``episodes`` independent episodes and aggregate.

    Episode e reuses ``run_episode`` with substream seed ``(*seed, e)``, so
    any single episode can be reproduced in isolation.
    """
    if episodes < 1:
        raise OutOfRange("episodes", episodes)
    agents = problem.agents
    base = _seed_tuple(seed)
    contexts = _contexts_for(agents, policies)
    n = len(agents)
    successes = 0
    belief_sums = np.zeros(n)
    hist = np.zeros((n, BELIEF_BINS), dtype=np.int64)
    elim_counts = np.zeros(n)
    truncated = 0
    for e in range(episodes):
        out = run_episode(
            problem, policies, capacity, base + (e,), max_steps, _contexts=contexts
        )
        successes += 1 if out.survivor_success else 0
        belief_sums += np.asarray(out.beliefs)
        for i, b in enumerate(out.beliefs):
            hist[i, min(int(b * BELIEF_BINS), BELIEF_BINS - 1)] += 1
        for i in out.eliminated:
            elim_counts[i] += 1
        truncated += sum(1 for ps in out.paths for p in ps if p.truncated)
    return SimulationSummary(
        episodes=episodes,
        success_rate=successes / episodes,
        mean_beliefs=tuple(float(v) for v in belief_sums / episodes),
        belief_histogram=tuple(tuple(int(c) for c in row) for row in hist),
        elimination_frequency=tuple(float(v) for v in elim_counts / episodes),
        truncated_paths=truncated,
        seed=base,
    )


def _log_ratio_matrix(
    m: Mdp, dec_pol: StationaryPolicy, ref_pol: StationaryPolicy
) -> np.ndarray:
    dec = chain_matrix(m, dec_pol)
    ref = chain_matrix(m, ref_pol)
    out = np.zeros_like(dec)
    pos = dec > 0.0
    ok = pos & (ref > 0.0)
    out[ok] = np.log(dec[ok] / ref[ok])
    out[pos & (ref <= 0.0)] = np.inf
    return out


def empirical_kl(
    dec_pol: StationaryPolicy,
    ref_pol: StationaryPolicy,
    m: Mdp,
    trials: int,
    seed,
    max_steps: int = MAX_STEPS_DEFAULT,
) -> Tuple[float, float]:
    """Sample mean and standard error of the path log-likelihood ratio.

    Paths are drawn under the deviating policy; by definition the mean
    estimates the path-distribution divergence. Truncated paths contribute
    their partial sums.
    """
    if trials < 1:
        raise OutOfRange("trials", trials)
    validate_policy(m, dec_pol)
    validate_policy(m, ref_pol)
    table = build_table(m, dec_pol)
    rng = _generator(seed)
    flat, offsets, _ = _draw(table, rng, trials, max_steps)

    lmat = _log_ratio_matrix(m, dec_pol, ref_pol)
    step_vals = lmat[flat[:-1], flat[1:]]
    # steps spanning two consecutive paths are artifacts of the flat layout
    step_vals[offsets[1:-1] - 1] = 0.0
    if np.isposinf(step_vals).any():
        k = int(np.argmax(np.isposinf(step_vals)))
        raise InfiniteLLR(
            f"sampled transition {table.states[flat[k]]!r} -> "
            f"{table.states[flat[k + 1]]!r} has zero reference probability"
        )
    padded = np.append(step_vals, 0.0)
    per_path = np.add.reduceat(padded, offsets[:-1])
    mean = float(per_path.mean())
    std_err = float(per_path.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean, std_err
