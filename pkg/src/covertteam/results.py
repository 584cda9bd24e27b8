"""Result documents and plot-data emission.

A result document is a single JSON object that embeds the config it came
from (plus its hash and the tool version), so a run can be re-validated or
re-simulated from the document alone. Per-agent metrics recorded here are
recomputed from the serialized policy tables, not copied from solver
internals: loading the document and re-evaluating reproduces the recorded
numbers exactly, which is the re-validation contract.

All file writes are atomic (temp file in the target directory, then rename)
and deterministic (sorted keys, fixed float formatting via repr).
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from . import __version__
from .delivery import DeliveryGraph, air, ground
from .mdp import Mdp, StationaryPolicy, disjunctive_reach, reach_probability
from .occupancy import kl_occupancy, occupancy_from_policy
from .subproblem import AgentSpec


def _sanitize(obj: Any) -> Any:
    """Make a document strictly JSON-serializable; non-finite floats -> null."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_sanitize(v) for v in obj)
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: str, doc: Dict[str, Any]) -> None:
    payload = json.dumps(_sanitize(doc), sort_keys=True, indent=2,
                         allow_nan=False) + "\n"
    _atomic_write(path, payload)


def _atomic_write(path: str, payload: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def policy_table(m: Mdp, pol: StationaryPolicy) -> Dict[str, Dict[str, float]]:
    """Explicit per-state distribution, every state present, no opaque blobs."""
    return {
        str(s): {str(a): float(pol.prob(s, a)) for a in m.actions_of[s]
                 if pol.prob(s, a) != 0.0}
        for s in m.states
    }


def policy_from_table(table: Dict[str, Dict[str, float]]) -> StationaryPolicy:
    return StationaryPolicy({s: dict(row) for s, row in table.items()})


def evaluate_policy(agent: AgentSpec, pol: StationaryPolicy) -> Tuple[float, float]:
    """(divergence from the agent's reference, reach of its targets)."""
    occ = occupancy_from_policy(agent.mdp, pol, agent.deviation_states)
    kl = kl_occupancy(occ, agent.reference)
    reach = reach_probability(agent.mdp, pol, agent.targets)
    return kl, reach


def agent_section(
    agent: AgentSpec, pol: StationaryPolicy, role: Optional[str] = None
) -> Dict[str, Any]:
    """Per-agent result block; metrics come from the serialized policy."""
    table = policy_table(agent.mdp, pol)
    kl, reach = evaluate_policy(agent, policy_from_table(table))
    block: Dict[str, Any] = {"policy": table, "kl": kl, "reach": reach}
    if role is not None:
        block["role"] = role
    return block


def result_document(
    config_doc: Dict[str, Any], config_hash: str, mode: str, **sections: Any
) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "tool": {"name": "covertteam", "version": __version__},
        "config_hash": config_hash,
        "config": config_doc,
        "mode": mode,
    }
    doc.update(sections)
    return doc


def reevaluate(doc: Dict[str, Any]) -> Dict[str, Any]:
    """Recompute every recorded per-agent metric from the embedded policies.

    Returns {"agents": [{"kl", "reach"}...], "disjunctive_reach"} for
    comparison against the document's own numbers.
    """
    from .config import parse_config  # deferred: config imports this module's peers

    cfg = parse_config(doc["config"])
    specs = cfg.agent_specs()
    rows = []
    reaches = []
    for spec, block in zip(specs, doc["agents"]):
        kl, reach = evaluate_policy(spec, policy_from_table(block["policy"]))
        rows.append({"kl": kl, "reach": reach})
        reaches.append(reach)
    return {"agents": rows, "disjunctive_reach": disjunctive_reach(reaches)}


# --- CSV emission ---------------------------------------------------------


def _format_cell(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        # float() strips numpy scalar wrappers from repr
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_format_cell(c) for c in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def write_btable_csv(path: str, b_table: Sequence[Sequence[Any]]) -> None:
    """Decoy-count sweep: one row per candidate count k."""
    write_csv(path, ("k", "B_k", "K_k", "Fail_k"), b_table)


def heat_rows(
    graph: DeliveryGraph, m: Mdp, pol: StationaryPolicy
) -> List[Tuple[str, float, float]]:
    """Per-node flight occupancy and landing inflow of a delivery policy."""
    dev = tuple(s for s in m.states if not m.is_absorbing(s))
    occ = occupancy_from_policy(m, pol, dev)
    rows = []
    for v in graph.nodes:
        flight = occ.state_mass(air(v))
        landed = sum(occ.flow(s, ground(v)) for s in dev)
        rows.append((v, flight, landed))
    return rows


def write_heat_csv(path: str, graph: DeliveryGraph, m: Mdp,
                   pol: StationaryPolicy) -> None:
    write_csv(path, ("node", "flight_occupancy", "landed_flow"),
              heat_rows(graph, m, pol))


def write_trace_csv(path: str, trace: Sequence[Tuple[int, float, bool]]) -> None:
    write_csv(path, ("iteration", "objective", "accepted"), trace)
