"""Command-line front end binding config parsing to the synthesis modes.

Exit codes are a stable contract: 0 success, 1 validation error, 2 the
requested team task is infeasible, 3 the convex solver gave up. Every
command that writes a result document embeds the config it ran from, so a
document can be re-validated or re-run without the original file.
"""

from __future__ import annotations

import functools
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import click

from . import __version__
from .config import ExperimentConfig, load_config, parse_config
from .errors import (
    ConfigError,
    Infeasible,
    MissingField,
    OutOfRange,
    SeedMissing,
    SolverFailure,
    ValidationError,
)
from .mdp import disjunctive_reach, reach_probability, validate_policy
from .refpol import SupervisorTask, synthesize_reference
from .results import (
    agent_section,
    load_json,
    policy_from_table,
    result_document,
    write_btable_csv,
    write_csv,
    write_heat_csv,
    write_json,
    write_trace_csv,
)
from .simulate import BELIEF_BINS, simulate_episodes
from .synthesis import TeamProblem, deceptive_subset_selection, deceptive_synthesis

_SIM_HEADER = ("agent", "mean_belief", "elimination_frequency") + tuple(
    f"belief_bin_{b}" for b in range(BELIEF_BINS)
)


def _guarded(fn):
    """Map the library's error taxonomy onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _bail(1, "validation error", exc)
        except Infeasible as exc:
            _bail(2, "infeasible", exc)
        except SolverFailure as exc:
            _bail(3, "solver failure", exc)

    return wrapper


def _bail(code: int, label: str, exc: Exception) -> None:
    click.echo(f"{label}: {type(exc).__name__}: {exc}", err=True)
    sys.exit(code)


def _apply_threads(threads: Optional[int]) -> None:
    if threads is None:
        return
    if threads < 1:
        raise OutOfRange("threads", threads)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _problem(cfg: ExperimentConfig, eps: Optional[float] = None) -> TeamProblem:
    if eps is not None and eps <= 0.0:
        raise OutOfRange("eps", eps)
    return TeamProblem(
        agents=cfg.agent_specs(),
        nu_A=cfg.nu_A,
        epsilon=cfg.epsilon if eps is None else eps,
        gamma_prime=cfg.gamma_prime,
        m_r=cfg.m_r,
        delta_margin=cfg.delta_margin,
    )


def _sibling(out_path: str, suffix: str) -> str:
    root, _ = os.path.splitext(out_path)
    return root + suffix


def _echo_agent_table(sections: Sequence[Dict[str, Any]]) -> None:
    has_role = any("role" in b for b in sections)
    header = f"{'agent':>5}  {'kl':>12}  {'reach':>12}"
    click.echo(header + ("  role" if has_role else ""))
    for i, block in enumerate(sections):
        line = f"{i:>5}  {block['kl']:>12.6f}  {block['reach']:>12.6f}"
        if has_role:
            line += f"  {block['role']}"
        click.echo(line)


_config_opt = click.option(
    "--config", "config_path", required=True, type=click.Path(),
    help="Experiment config (JSON document).",
)
_out_opt = click.option(
    "--out", "out_path", required=True, type=click.Path(),
    help="Output path.",
)
_eps_opt = click.option(
    "--eps", type=float, default=None,
    help="Override the config's bisection tolerance.",
)
_threads_opt = click.option(
    "--threads", type=int, default=None,
    help="Cap numeric-library threads (sets OMP_NUM_THREADS and friends).",
)


@click.group()
@click.version_option(version=__version__, prog_name="covertteam")
def main() -> None:
    """Deceptive team synthesis: worst-case policies, decoys, replays."""


@main.command()
@_config_opt
@_guarded
def validate(config_path: str) -> None:
    """Check a config end to end and print a short report."""
    cfg = load_config(config_path)
    click.echo(f"mode: {cfg.mode}")
    click.echo(f"nu_A: {cfg.nu_A}")
    click.echo(f"agents: {len(cfg.agents)}")
    for i, a in enumerate(cfg.agents):
        reach = reach_probability(a.mdp, a.reference, a.targets)
        kind = "delivery" if a.graph is not None else "inline"
        click.echo(
            f"  agent {i}: {kind}, {len(a.mdp.states)} states, "
            f"reference reach {reach:.4f}"
        )
    click.echo("ok")


@main.command(name="worst-case")
@_config_opt
@_out_opt
@_eps_opt
@_threads_opt
@_guarded
def worst_case(config_path: str, out_path: str, eps: Optional[float],
               threads: Optional[int]) -> None:
    """Minimize the worst per-agent divergence subject to team reachability."""
    _apply_threads(threads)
    cfg = load_config(config_path)
    problem = _problem(cfg, eps)
    res = deceptive_synthesis(problem, cfg.solver)
    sections = [
        agent_section(spec, pol)
        for spec, pol in zip(problem.agents, res.policies)
    ]
    team = {
        "kl_bound": res.kl_bound,
        "disjunctive_reach": disjunctive_reach([b["reach"] for b in sections]),
        "nu_A": cfg.nu_A,
    }
    doc = result_document(cfg.document, cfg.config_hash, "worst-case",
                          agents=sections, team=team)
    write_json(out_path, doc)
    _echo_agent_table(sections)
    click.echo(
        f"kl_bound {res.kl_bound:.6f}  disjunctive reach "
        f"{team['disjunctive_reach']:.6f}  (nu_A {cfg.nu_A})"
    )
    click.echo(f"wrote {out_path}")


@main.command()
@_config_opt
@_out_opt
@_eps_opt
@_threads_opt
@_guarded
def decoys(config_path: str, out_path: str, eps: Optional[float],
           threads: Optional[int]) -> None:
    """Pick decoys against budgeted elimination, then synthesize the team."""
    _apply_threads(threads)
    cfg = load_config(config_path)
    problem = _problem(cfg, eps)
    res = deceptive_subset_selection(problem, cfg.solver)
    decoy = set(res.decoy_set)
    sections = [
        agent_section(spec, pol, role="decoy" if i in decoy else "non-decoy")
        for i, (spec, pol) in enumerate(zip(problem.agents, res.policies))
    ]
    survivors = [b["reach"] for i, b in enumerate(sections) if i not in decoy]
    team = {
        "k_star": res.k_star,
        "decoy_set": sorted(res.decoy_set),
        "non_decoy_kl": res.non_decoy_kl,
        "decoy_kl": res.decoy_kl,
        "disjunctive_reach": disjunctive_reach([b["reach"] for b in sections]),
        "survivor_reach": disjunctive_reach(survivors),
        "nu_A": cfg.nu_A,
    }
    b_rows = [list(row) for row in res.b_table]
    doc = result_document(cfg.document, cfg.config_hash, "decoys",
                          agents=sections, team=team, b_table=b_rows)
    write_json(out_path, doc)
    csv_path = _sibling(out_path, ".btable.csv")
    write_btable_csv(csv_path, res.b_table)
    _echo_agent_table(sections)
    click.echo(
        f"k_star {res.k_star}  decoys {team['decoy_set']}  "
        f"non-decoy kl {res.non_decoy_kl:.6f}  decoy kl {res.decoy_kl:.6f}"
    )
    click.echo(f"survivor reach {team['survivor_reach']:.6f}  (nu_A {cfg.nu_A})")
    click.echo(f"wrote {out_path} and {csv_path}")


@main.command()
@_config_opt
@click.option("--result", "result_path", required=True, type=click.Path(),
              help="Result document whose policies to replay.")
@click.option("--trials", type=int, default=1000, show_default=True,
              help="Number of independent episodes.")
@click.option("--seed", type=int, default=None,
              help="Override the config's seed.")
@_out_opt
@_threads_opt
@_guarded
def simulate(config_path: str, result_path: str, trials: int,
             seed: Optional[int], out_path: str,
             threads: Optional[int]) -> None:
    """Replay a result document's policies and aggregate supervisor outcomes."""
    _apply_threads(threads)
    cfg = load_config(config_path)
    doc = load_json(result_path)
    blocks = doc.get("agents")
    if not blocks:
        raise ConfigError(result_path, "result document has no agents section")
    if len(blocks) != len(cfg.agents):
        raise ConfigError(
            result_path,
            f"result has {len(blocks)} agents, config has {len(cfg.agents)}",
        )
    if trials < 0:
        raise OutOfRange("trials", trials)
    policies = [policy_from_table(b["policy"]) for b in blocks]
    # replayed policies must be playable on the configured models
    for entry, pol in zip(cfg.agents, policies):
        validate_policy(entry.mdp, pol)
    if trials == 0:
        write_csv(out_path, _SIM_HEADER, [])
        click.echo("episodes 0")
        click.echo(f"wrote {out_path}")
        return
    effective_seed = (seed,) if seed is not None else cfg.seed
    if effective_seed is None:
        raise SeedMissing("simulate needs a seed (config or --seed)")
    summary = simulate_episodes(
        _problem(cfg), policies, cfg.capacity, trials, effective_seed
    )
    rows = [
        (i, summary.mean_beliefs[i], summary.elimination_frequency[i],
         *summary.belief_histogram[i])
        for i in range(len(policies))
    ]
    write_csv(out_path, _SIM_HEADER, rows)
    click.echo(
        f"episodes {summary.episodes}  success rate "
        f"{summary.success_rate:.4f}  truncated paths {summary.truncated_paths}"
    )
    click.echo(f"wrote {out_path}")


@main.command()
@_config_opt
@_out_opt
@_eps_opt
@_threads_opt
@_guarded
def refpol(config_path: str, out_path: str, eps: Optional[float],
           threads: Optional[int]) -> None:
    """Tune the supervisor's reference assignment against best deception."""
    _apply_threads(threads)
    cfg = load_config(config_path)
    for i, a in enumerate(cfg.agents):
        if a.supervisor_targets is None:
            raise MissingField(f"agents[{i}].supervisor_targets")
    if eps is not None and eps <= 0.0:
        raise OutOfRange("eps", eps)
    task = SupervisorTask(
        supervisor_targets=tuple(a.supervisor_targets for a in cfg.agents),
        thresholds=tuple(a.supervisor_threshold for a in cfg.agents),
        iterations=cfg.refpol.iterations,
        step_size=cfg.refpol.step_size,
        smoothing_temperature=cfg.refpol.smoothing_temperature,
    )
    trace: List[tuple] = []
    specs = cfg.agent_specs()
    refs = synthesize_reference(
        specs, task, cfg.nu_A,
        eps=cfg.epsilon if eps is None else eps,
        tol=cfg.solver, trace_sink=trace,
    )
    sections = []
    for entry, spec, pol in zip(cfg.agents, specs, refs):
        block = agent_section(spec, pol)
        block["supervisor_reach"] = reach_probability(
            spec.mdp, pol, entry.supervisor_targets
        )
        sections.append(block)
    accepted = [v for (_, v, ok) in trace if ok and v == v]
    team = {
        "objective": max(accepted) if accepted else None,
        "iterations": cfg.refpol.iterations,
        "nu_A": cfg.nu_A,
    }
    doc = result_document(cfg.document, cfg.config_hash, "refpol",
                          agents=sections, team=team)
    write_json(out_path, doc)
    csv_path = _sibling(out_path, ".trace.csv")
    write_trace_csv(csv_path, trace)
    _echo_agent_table(sections)
    for i, block in enumerate(sections):
        click.echo(f"  agent {i} supervisor reach {block['supervisor_reach']:.6f}")
    if team["objective"] is not None:
        click.echo(f"objective {team['objective']:.6f}")
    click.echo(f"wrote {out_path} and {csv_path}")


@main.command(name="emit-plot-data")
@click.option("--result", "result_path", required=True, type=click.Path(),
              help="Result document to re-emit plot data from.")
@click.option("--out", "out_prefix", required=True, type=click.Path(),
              help="Path prefix for the emitted CSV files.")
@_guarded
def emit_plot_data(result_path: str, out_prefix: str) -> None:
    """Emit plottable CSVs (decoy curve, delivery heat data) from a result."""
    doc = load_json(result_path)
    if "config" not in doc:
        raise ConfigError(result_path, "result document has no embedded config")
    cfg = parse_config(doc["config"])
    wrote = []
    if "b_table" in doc:
        path = f"{out_prefix}.btable.csv"
        write_btable_csv(path, doc["b_table"])
        wrote.append(path)
    for i, (entry, block) in enumerate(zip(cfg.agents, doc.get("agents", []))):
        if entry.graph is None:
            continue
        path = f"{out_prefix}.agent{i}.heat.csv"
        write_heat_csv(path, entry.graph, entry.mdp,
                       policy_from_table(block["policy"]))
        wrote.append(path)
    if not wrote:
        click.echo("nothing to emit: no b_table and no delivery agents")
        return
    for path in wrote:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
