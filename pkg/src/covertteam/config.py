"""Experiment configuration: one JSON document describing a whole run.

An agent entry carries either an inline MDP (states, actions, transitions,
initial) or a delivery-graph spec that expands into one; its reference policy
is either an explicit per-state distribution table or the string
"shortest_path" (delivery agents only, steered at the entry's
``supervisor_target``). Team-level knobs mirror the synthesis surface: nu_A,
epsilon, gamma_prime, m_r, priors, utilities, solver tolerances, seed, mode.

Validation errors carry a JSON path such as ``agents[1].mdp.transitions[3]``
so a broken document points at its own offending element; syntactic errors
keep the line/column from the JSON parser.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .delivery import DeliveryGraph, DeliveryParams, build_delivery_mdp, shortest_path_reference
from .errors import ConfigError, MissingField, ValidationError
from .mdp import Mdp, StationaryPolicy, validate_mdp, validate_policy
from .subproblem import AgentSpec, ToleranceSet

MODES = ("worst-case", "decoys", "refpol", "simulate")


def _require(doc: Dict[str, Any], key: str, path: str) -> Any:
    if key not in doc:
        raise MissingField(f"{path}.{key}" if path else key)
    return doc[key]


def _as_number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _as_probability(value: Any, path: str) -> float:
    v = _as_number(value, path)
    if not (0.0 <= v <= 1.0):
        raise ConfigError(path, f"probability out of range: {v}")
    return v


@dataclass
class AgentEntry:
    """One configured agent, fully built and validated."""

    mdp: Mdp
    reference: StationaryPolicy
    targets: frozenset
    prior: float
    utility: float
    graph: Optional[DeliveryGraph] = None
    supervisor_targets: Optional[frozenset] = None
    supervisor_threshold: Optional[float] = None

    def spec(self) -> AgentSpec:
        return AgentSpec(self.mdp, self.reference, self.targets,
                         prior=self.prior, utility=self.utility)


@dataclass
class RefpolOptions:
    iterations: int = 20
    step_size: float = 1.0
    smoothing_temperature: float = 0.1


@dataclass
class ExperimentConfig:
    mode: str
    nu_A: float
    epsilon: float
    gamma_prime: float
    m_r: int
    delta_margin: float
    capacity: float
    seed: Optional[Tuple[int, ...]]
    solver: ToleranceSet
    agents: List[AgentEntry]
    refpol: RefpolOptions
    document: Dict[str, Any] = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return document_hash(self.document)

    def agent_specs(self) -> List[AgentSpec]:
        return [a.spec() for a in self.agents]


def document_hash(doc: Dict[str, Any]) -> str:
    """Whitespace-insensitive digest of a parsed JSON document."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build_inline_mdp(doc: Dict[str, Any], path: str) -> Mdp:
    states = _require(doc, "states", path)
    if not isinstance(states, list) or not states:
        raise ConfigError(f"{path}.states", "expected a non-empty list")
    actions = _require(doc, "actions", path)
    if not isinstance(actions, dict):
        raise ConfigError(f"{path}.actions", "expected an object")
    initial = _require(doc, "initial", path)
    rows = _require(doc, "transitions", path)
    if not isinstance(rows, list):
        raise ConfigError(f"{path}.transitions", "expected a list")
    triples = []
    for i, row in enumerate(rows):
        if not (isinstance(row, list) and len(row) == 4):
            raise ConfigError(f"{path}.transitions[{i}]",
                              "expected [state, action, successor, prob]")
        s, a, q, p = row
        triples.append((s, a, q, _as_number(p, f"{path}.transitions[{i}][3]")))
    try:
        m = Mdp(states, actions, triples, initial)
        validate_mdp(m)
    except ValidationError as exc:
        raise ConfigError(path, f"{type(exc).__name__}: {exc}") from exc
    return m


def _build_delivery(doc: Dict[str, Any], path: str) -> Tuple[Mdp, frozenset, DeliveryGraph]:
    nodes = _require(doc, "nodes", path)
    edges = _require(doc, "edges", path)
    start = _require(doc, "start", path)
    agent_targets = _require(doc, "agent_targets", path)
    try:
        graph = DeliveryGraph(
            nodes=tuple(nodes),
            edges=tuple((u, v) for u, v in edges),
            start=start,
            agent_targets=tuple(agent_targets),
        )
        params = DeliveryParams(
            p_target=_as_probability(doc.get("p_target", 0.8), f"{path}.p_target"),
            p_land=_as_probability(doc.get("p_land", 0.05), f"{path}.p_land"),
        )
        m, targets = build_delivery_mdp(graph, params)
    except ValidationError as exc:
        raise ConfigError(path, f"{type(exc).__name__}: {exc}") from exc
    return m, targets, graph


def _build_reference(
    entry: Dict[str, Any], m: Mdp, graph: Optional[DeliveryGraph], path: str
) -> StationaryPolicy:
    ref = _require(entry, "reference", path)
    if ref == "shortest_path":
        if graph is None:
            raise ConfigError(
                f"{path}.reference",
                '"shortest_path" needs a delivery agent',
            )
        target = _require(entry, "supervisor_target", path)
        try:
            return shortest_path_reference(graph, target)
        except ValidationError as exc:
            raise ConfigError(f"{path}.supervisor_target", str(exc)) from exc
    if not isinstance(ref, dict):
        raise ConfigError(f"{path}.reference",
                          'expected a policy table or "shortest_path"')
    dist = {}
    for s, row in ref.items():
        if not isinstance(row, dict):
            raise ConfigError(f"{path}.reference.{s}", "expected an object")
        dist[s] = {a: _as_number(p, f"{path}.reference.{s}.{a}") for a, p in row.items()}
    pol = StationaryPolicy(dist)
    try:
        validate_policy(m, pol)
    except ValidationError as exc:
        raise ConfigError(f"{path}.reference", f"{type(exc).__name__}: {exc}") from exc
    return pol


def _build_agent(entry: Any, i: int, priors, utilities) -> AgentEntry:
    path = f"agents[{i}]"
    if not isinstance(entry, dict):
        raise ConfigError(path, "expected an object")
    graph = None
    if "mdp" in entry and "delivery" in entry:
        raise ConfigError(path, "give either mdp or delivery, not both")
    if "mdp" in entry:
        m = _build_inline_mdp(entry["mdp"], f"{path}.mdp")
        targets = frozenset(_require(entry, "targets", path))
        for t in targets:
            if t not in m.state_index:
                raise ConfigError(f"{path}.targets", f"unknown state {t!r}")
    elif "delivery" in entry:
        m, targets, graph = _build_delivery(entry["delivery"], f"{path}.delivery")
        if "targets" in entry:
            raise ConfigError(f"{path}.targets",
                              "delivery agents take targets from the graph")
    else:
        raise MissingField(f"{path}.mdp")

    reference = _build_reference(entry, m, graph, path)

    sup_targets = None
    sup_threshold = None
    if "supervisor_targets" in entry:
        sup_targets = frozenset(entry["supervisor_targets"])
        for t in sup_targets:
            if t not in m.state_index:
                raise ConfigError(f"{path}.supervisor_targets", f"unknown state {t!r}")
        sup_threshold = _as_probability(
            _require(entry, "supervisor_threshold", path),
            f"{path}.supervisor_threshold",
        )
    elif graph is not None and entry.get("reference") == "shortest_path":
        # a delivery task implies a duty at the assigned landing node unless
        # the config says otherwise
        sup_targets = frozenset({f"ground:{entry['supervisor_target']}"})
        sup_threshold = 0.0

    return AgentEntry(
        mdp=m,
        reference=reference,
        targets=targets,
        prior=priors[i],
        utility=utilities[i],
        graph=graph,
        supervisor_targets=sup_targets,
        supervisor_threshold=sup_threshold,
    )


def parse_config(doc: Dict[str, Any]) -> ExperimentConfig:
    """Validate a parsed JSON document and build every agent in it."""
    if not isinstance(doc, dict):
        raise ConfigError("$", "top level must be an object")
    mode = doc.get("mode", "worst-case")
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {mode!r}; choose from {MODES}")
    nu_A = _as_probability(_require(doc, "nu_A", ""), "nu_A")
    epsilon = _as_number(doc.get("epsilon", 1e-4), "epsilon")
    if epsilon <= 0.0:
        raise ConfigError("epsilon", f"must be positive, got {epsilon}")
    gamma_prime = _as_number(doc.get("gamma_prime", 1.2), "gamma_prime")
    if gamma_prime <= 1.0:
        raise ConfigError("gamma_prime", f"must exceed 1, got {gamma_prime}")
    m_r = doc.get("m_r", 1)
    if isinstance(m_r, bool) or not isinstance(m_r, int) or m_r < 1:
        raise ConfigError("m_r", f"expected a positive integer, got {m_r!r}")
    delta_margin = _as_number(doc.get("delta_margin", 0.0), "delta_margin")
    if delta_margin < 0.0:
        raise ConfigError("delta_margin", f"must be nonnegative, got {delta_margin}")
    capacity = _as_number(doc.get("capacity", 0.0), "capacity")
    if capacity < 0.0:
        raise ConfigError("capacity", f"must be nonnegative, got {capacity}")

    seed = doc.get("seed")
    if seed is not None:
        if isinstance(seed, bool):
            raise ConfigError("seed", "expected an integer or list of integers")
        if isinstance(seed, int):
            seed = (seed,)
        elif isinstance(seed, list) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in seed
        ):
            seed = tuple(seed)
        else:
            raise ConfigError("seed", "expected an integer or list of integers")

    solver_doc = doc.get("solver", {})
    if not isinstance(solver_doc, dict):
        raise ConfigError("solver", "expected an object")
    solver = ToleranceSet(
        gap=_as_number(solver_doc.get("gap", 1e-8), "solver.gap"),
        feas=_as_number(solver_doc.get("feas", 1e-8), "solver.feas"),
    )

    agents_doc = _require(doc, "agents", "")
    if not isinstance(agents_doc, list) or not agents_doc:
        raise ConfigError("agents", "expected a non-empty list")
    n = len(agents_doc)

    priors = doc.get("priors", [0.5] * n)
    utilities = doc.get("utilities", [1.0] * n)
    if not isinstance(priors, list) or len(priors) != n:
        raise ConfigError("priors", f"expected a list of {n} probabilities")
    if not isinstance(utilities, list) or len(utilities) != n:
        raise ConfigError("utilities", f"expected a list of {n} weights")
    priors = [_as_probability(p, f"priors[{i}]") for i, p in enumerate(priors)]
    utilities = [_as_number(u, f"utilities[{i}]") for i, u in enumerate(utilities)]

    agents = [_build_agent(e, i, priors, utilities) for i, e in enumerate(agents_doc)]

    refpol_doc = doc.get("refpol", {})
    if not isinstance(refpol_doc, dict):
        raise ConfigError("refpol", "expected an object")
    refpol = RefpolOptions(
        iterations=refpol_doc.get("iterations", 20),
        step_size=_as_number(refpol_doc.get("step_size", 1.0), "refpol.step_size"),
        smoothing_temperature=_as_number(
            refpol_doc.get("smoothing_temperature", 0.1),
            "refpol.smoothing_temperature",
        ),
    )
    if (isinstance(refpol.iterations, bool) or not isinstance(refpol.iterations, int)
            or refpol.iterations < 0):
        raise ConfigError("refpol.iterations", "expected a nonnegative integer")

    if mode == "refpol":
        for i, a in enumerate(agents):
            if a.supervisor_targets is None:
                raise MissingField(f"agents[{i}].supervisor_targets")

    return ExperimentConfig(
        mode=mode,
        nu_A=nu_A,
        epsilon=epsilon,
        gamma_prime=gamma_prime,
        m_r=m_r,
        delta_margin=delta_margin,
        capacity=capacity,
        seed=seed,
        solver=solver,
        agents=agents,
        refpol=refpol,
        document=doc,
    )


def load_config(path: str) -> ExperimentConfig:
    """Read, parse, and validate a config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(path, str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}", exc.msg
        ) from exc
    return parse_config(doc)
