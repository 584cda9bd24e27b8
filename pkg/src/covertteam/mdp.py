"""Finite MDPs, stationary policies, and induced-chain analysis.

The model is deliberately small: explicit state and action sets, a dense-ish
transition kernel stored as nested dicts, and numpy matrices built on demand
for the linear-algebra paths (hitting probabilities, visit counts). States and
actions are arbitrary hashable ids; the JSON interchange layer restricts them
to strings.

Conventions used throughout the package:

* the chain induced by policy ``pi`` has entries
  ``chain[s, q] = sum_a P(s, a, q) * pi(s, a)``;
* a state is absorbing iff its only successor (under any action) is itself;
* reachability always means "eventually hit the target set".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, Mapping, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    EmptyActionSet,
    NonAbsorbingTarget,
    OutOfRange,
    RowNotStochastic,
    UnknownAction,
    UnknownState,
)

State = Hashable
Action = Hashable

ROW_SUM_TOL = 1e-9
# direct linear solve up to this many states, value iteration beyond
DIRECT_SOLVE_LIMIT = 10_000
VI_TOL = 1e-10


class Mdp:
    """Finite Markov decision process ``(S, A, P, s0)``.

    Parameters
    ----------
    states:
        Iterable of hashable state ids; order fixes the internal indexing.
    actions_of:
        Map from state to the iterable of actions available there.
    transitions:
        Either a map ``(s, a, q) -> prob`` or an iterable of
        ``(s, a, q, prob)`` rows. Zero entries may be omitted.
    initial_state:
        The unique initial state.
    """

    def __init__(self, states, actions_of, transitions, initial_state):
        self.states: Tuple[State, ...] = tuple(states)
        self.state_index: Dict[State, int] = {s: i for i, s in enumerate(self.states)}
        if len(self.state_index) != len(self.states):
            raise OutOfRange("duplicate state ids", self.states)
        self.actions_of: Dict[State, Tuple[Action, ...]] = {
            s: tuple(actions_of.get(s, ())) for s in self.states
        }
        self.initial_state: State = initial_state

        # normalize transitions into nested dicts s -> a -> {q: p}
        kernel: Dict[State, Dict[Action, Dict[State, float]]] = {
            s: {a: {} for a in self.actions_of[s]} for s in self.states
        }
        if isinstance(transitions, Mapping):
            rows = ((s, a, q, p) for (s, a, q), p in transitions.items())
        else:
            rows = transitions
        for s, a, q, p in rows:
            if s not in self.state_index:
                raise UnknownState(s, "transition source")
            if q not in self.state_index:
                raise UnknownState(q, "transition successor")
            if a not in kernel[s]:
                raise UnknownAction(s, a)
            if p != 0.0:
                kernel[s][a][q] = kernel[s][a].get(q, 0.0) + float(p)
        self._kernel = kernel
        self._cache: Dict[str, object] = {}

    # --- basic accessors --------------------------------------------------

    def prob(self, s: State, a: Action, q: State) -> float:
        return self._kernel[s][a].get(q, 0.0)

    def row(self, s: State, a: Action) -> Dict[State, float]:
        return self._kernel[s][a]

    def successors(self, s: State) -> frozenset:
        """All states reachable from ``s`` in one step under some action."""
        key = ("succ", s)
        if key not in self._cache:
            out = set()
            for a in self.actions_of[s]:
                out.update(self._kernel[s][a])
            self._cache[key] = frozenset(out)
        return self._cache[key]  # type: ignore[return-value]

    def is_absorbing(self, s: State) -> bool:
        return self.successors(s) == frozenset({s})

    @property
    def n_states(self) -> int:
        return len(self.states)

    def __repr__(self) -> str:
        return f"Mdp(|S|={self.n_states}, s0={self.initial_state!r})"


def validate_mdp(m: Mdp) -> None:
    """Check stochasticity and referential integrity; raise on violation."""
    if m.initial_state not in m.state_index:
        raise UnknownState(m.initial_state, "initial state")
    for s in m.states:
        actions = m.actions_of[s]
        if not actions:
            raise EmptyActionSet(s)
        for a in actions:
            row = m.row(s, a)
            total = 0.0
            for q, p in row.items():
                if p < 0.0:
                    raise RowNotStochastic(s, a, p)
                total += p
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise RowNotStochastic(s, a, total)


@dataclass
class StationaryPolicy:
    """Stationary (memoryless, stochastic) policy: per-state action distribution."""

    dist: Dict[State, Dict[Action, float]]

    def prob(self, s: State, a: Action) -> float:
        return self.dist.get(s, {}).get(a, 0.0)

    def support(self, s: State) -> Tuple[Action, ...]:
        return tuple(a for a, p in self.dist.get(s, {}).items() if p > 0.0)

    @classmethod
    def deterministic(cls, mapping: Mapping[State, Action]) -> "StationaryPolicy":
        return cls({s: {a: 1.0} for s, a in mapping.items()})

    @classmethod
    def mix(cls, hi: "StationaryPolicy", lo: "StationaryPolicy", lam: float,
            states: Iterable[State]) -> "StationaryPolicy":
        """Per-state convex combination ``lam*hi + (1-lam)*lo`` on ``states``."""
        out: Dict[State, Dict[Action, float]] = {}
        for s in states:
            acc: Dict[Action, float] = {}
            for a, p in hi.dist.get(s, {}).items():
                acc[a] = acc.get(a, 0.0) + lam * p
            for a, p in lo.dist.get(s, {}).items():
                acc[a] = acc.get(a, 0.0) + (1.0 - lam) * p
            out[s] = acc
        return cls(out)


def validate_policy(m: Mdp, pol: StationaryPolicy) -> None:
    """Check that ``pol`` is a valid stationary policy for ``m``."""
    for s in m.states:
        row = pol.dist.get(s)
        if row is None or not row:
            raise EmptyActionSet(s)
        total = 0.0
        for a, p in row.items():
            if a not in m.actions_of[s]:
                raise UnknownAction(s, a)
            if p < -ROW_SUM_TOL:
                raise OutOfRange(f"policy probability at ({s!r}, {a!r})", p)
            total += p
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise RowNotStochastic(s, f"policy@{s!r}", total)
    for s in pol.dist:
        if s not in m.state_index:
            raise UnknownState(s, "policy")


# --- induced chain --------------------------------------------------------


def chain_matrix(m: Mdp, pol: StationaryPolicy) -> np.ndarray:
    """Dense induced-chain matrix ``T[i, j] = sum_a P(s_i, a, s_j) pi(s_i, a)``."""
    n = m.n_states
    T = np.zeros((n, n))
    for s in m.states:
        i = m.state_index[s]
        for a, pa in pol.dist.get(s, {}).items():
            if pa == 0.0:
                continue
            for q, p in m.row(s, a).items():
                T[i, m.state_index[q]] += pa * p
    return T


def induced_chain(m: Mdp, pol: StationaryPolicy) -> Dict[Tuple[State, State], float]:
    """Markov chain induced by ``pol``: positive entries of ``pi_{s,q}``."""
    validate_policy(m, pol)
    T = chain_matrix(m, pol)
    out: Dict[Tuple[State, State], float] = {}
    for i, s in enumerate(m.states):
        for j in np.nonzero(T[i])[0]:
            out[(s, m.states[j])] = T[i, j]
    return out


# --- strongly connected components (iterative Tarjan) ---------------------


def _tarjan_scc(n: int, succ: Sequence[Sequence[int]]):
    """SCCs of a digraph given as successor lists; returned in reverse
    topological order (components with no internal ordering guarantees)."""
    index = [-1] * n
    lowlink = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            recurse = False
            for i in range(pi, len(succ[v])):
                w = succ[v][i]
                if index[w] == -1:
                    work[-1] = (v, i + 1)
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    lowlink[v] = min(lowlink[v], index[w])
            if recurse:
                continue
            work.pop()
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(comp)
            if work:
                u, _ = work[-1]
                lowlink[u] = min(lowlink[u], lowlink[v])
    return sccs


def closed_classes_of_chain(m: Mdp, T: np.ndarray) -> list[frozenset]:
    """Closed communicating classes of the chain ``T`` (no outgoing edge)."""
    n = m.n_states
    succ = [list(np.nonzero(T[i] > 0.0)[0]) for i in range(n)]
    sccs = _tarjan_scc(n, succ)
    out = []
    for comp in sccs:
        members = set(comp)
        closed = all(all(w in members for w in succ[v]) for v in comp)
        if closed:
            out.append(frozenset(m.states[v] for v in comp))
    return out


@dataclass(frozen=True)
class Decomposition:
    """Role assignment of states under a reference policy.

    ``closed_classes`` is the union of closed communicating classes of the
    reference chain (target states may appear here too; role assignment gives
    targets priority). ``deviation_states`` are the remaining states, kept in
    the MDP's state order; these are exactly the states where a deceptive
    policy may deviate while keeping the divergence finite.
    """

    closed_classes: frozenset
    targets: frozenset
    deviation_states: Tuple[State, ...]

    def role(self, s: State) -> str:
        if s in self.targets:
            return "target"
        if s in self.closed_classes:
            return "closed"
        return "deviation"


def decompose(m: Mdp, ref_pol: StationaryPolicy, targets: Iterable[State]) -> Decomposition:
    """Split states into targets / closed classes / deviation states.

    Targets must be absorbing. A state belongs to the deviation set iff it is
    neither a target nor inside a closed communicating class of the reference
    chain; such states are transient under the reference policy.
    """
    targets = frozenset(targets)
    for t in targets:
        if t not in m.state_index:
            raise UnknownState(t, "targets")
        if not m.is_absorbing(t):
            raise NonAbsorbingTarget(t)
    validate_policy(m, ref_pol)
    T = chain_matrix(m, ref_pol)
    closed = frozenset().union(*closed_classes_of_chain(m, T)) if m.n_states else frozenset()
    dev = tuple(s for s in m.states if s not in targets and s not in closed)
    return Decomposition(closed_classes=closed, targets=targets, deviation_states=dev)


# --- reachability ----------------------------------------------------------


def _reverse_reachable(T: np.ndarray, targets_idx: Iterable[int]) -> np.ndarray:
    """Boolean mask of states with a chain path into ``targets_idx``."""
    n = T.shape[0]
    mask = np.zeros(n, dtype=bool)
    stack = list(targets_idx)
    mask[stack] = True
    pos = T > 0.0
    while stack:
        j = stack.pop()
        for i in np.nonzero(pos[:, j])[0]:
            if not mask[i]:
                mask[i] = True
                stack.append(i)
    return mask


def hitting_probabilities(m: Mdp, pol: StationaryPolicy, targets: Iterable[State]) -> np.ndarray:
    """Probability of eventually reaching ``targets`` from every state.

    Solves the linear hitting system on the states that can reach the target
    set (direct sparse solve up to ``DIRECT_SOLVE_LIMIT`` states, value
    iteration beyond); states that cannot reach it get probability zero.
    """
    targets = frozenset(targets)
    for t in targets:
        if t not in m.state_index:
            raise UnknownState(t, "targets")
    T = chain_matrix(m, pol)
    n = m.n_states
    tgt_idx = [m.state_index[t] for t in targets]
    h = np.zeros(n)
    if not tgt_idx:
        return h
    h[tgt_idx] = 1.0
    can_reach = _reverse_reachable(T, tgt_idx)
    maybe = [i for i in range(n) if can_reach[i] and i not in set(tgt_idx)]
    if not maybe:
        return h
    if n <= DIRECT_SOLVE_LIMIT:
        Q = T[np.ix_(maybe, maybe)]
        b = T[np.ix_(maybe, tgt_idx)].sum(axis=1)
        A = sp.csc_matrix(np.eye(len(maybe)) - Q)
        h[maybe] = spla.spsolve(A, b)
    else:
        # value iteration to sup-norm tolerance, converging from below
        cur = np.zeros(n)
        cur[tgt_idx] = 1.0
        rows = T[maybe]
        while True:
            nxt = rows @ cur
            delta = np.max(np.abs(nxt - cur[maybe]))
            cur[maybe] = nxt
            if delta < VI_TOL:
                break
        h[maybe] = cur[maybe]
    return np.clip(h, 0.0, 1.0)


def reach_probability(m: Mdp, pol: StationaryPolicy, targets: Iterable[State]) -> float:
    """Probability that the chain induced by ``pol`` ever visits ``targets``."""
    validate_policy(m, pol)
    if m.initial_state in frozenset(targets):
        return 1.0
    h = hitting_probabilities(m, pol, targets)
    return float(h[m.state_index[m.initial_state]])


def disjunctive_reach(probs: Sequence[float]) -> float:
    """Probability that at least one independent event occurs: ``1 - prod(1 - p_i)``."""
    acc = 1.0
    for p in probs:
        if p < -1e-12 or p > 1.0 + 1e-12:
            raise OutOfRange("reach probability", p)
        acc *= 1.0 - min(max(p, 0.0), 1.0)
    return 1.0 - acc
