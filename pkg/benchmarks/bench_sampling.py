"""Compare the compiled path-sampling kernel with the pure-Python fallback.

Both kernels consume the same SamplingTable and the same Philox stream, so
their outputs are identical; only the throughput differs. Run:

    python3 benchmarks/bench_sampling.py --paths 20000 --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from covertteam import simulate
from covertteam._pathtable import build_table, sample_paths_py
from covertteam.delivery import DeliveryGraph, build_delivery_mdp
from covertteam.mdp import Mdp, StationaryPolicy


def two_route_case():
    states = ["s1", "s2", "s3", "s4", "goal"]
    actions = {"s1": ["a", "b"], "s2": ["go", "land"],
               "s3": ["stay"], "s4": ["stay"], "goal": ["stay"]}
    triples = [
        ("s1", "a", "s2", 0.9), ("s1", "a", "s4", 0.1),
        ("s1", "b", "s2", 0.1), ("s1", "b", "s4", 0.9),
        ("s2", "go", "s3", 0.8), ("s2", "go", "goal", 0.2),
        ("s2", "land", "goal", 1.0),
        ("s3", "stay", "s3", 1.0), ("s4", "stay", "s4", 1.0),
        ("goal", "stay", "goal", 1.0),
    ]
    m = Mdp(states, actions, triples, "s1")
    pol = StationaryPolicy({
        "s1": {"a": 0.6, "b": 0.4}, "s2": {"go": 0.5, "land": 0.5},
        "s3": {"stay": 1.0}, "s4": {"stay": 1.0}, "goal": {"stay": 1.0},
    })
    return "two-route", m, pol


def delivery_case():
    graph = DeliveryGraph(
        nodes=("l2", "l1", "s", "r1", "r2"),
        edges=(("s", "l1"), ("l1", "l2"), ("s", "r1"), ("r1", "r2")),
        start="s",
        agent_targets=("r1",),
    )
    m, _ = build_delivery_mdp(graph)
    pol = StationaryPolicy({
        s: {a: 1.0 / len(m.actions_of[s]) for a in m.actions_of[s]}
        for s in m.states
    })
    return "delivery uniform", m, pol


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def time_kernel(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--paths", type=int, default=20000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--max-steps", type=int, default=10000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    compiled = simulate._compiled
    if compiled is None:
        print("compiled kernel unavailable; benchmarking the fallback only")

    for name, m, pol in (two_route_case(), delivery_case()):
        table = build_table(m, pol)
        t_py = time_kernel(
            lambda: sample_paths_py(table, rng(args.seed), args.paths, args.max_steps),
            args.repeats,
        )
        line = (f"{name:18s} pure {args.paths / t_py:12.0f} paths/s "
                f"({t_py * 1e3:8.2f} ms)")
        if compiled is not None:
            t_cy = time_kernel(
                lambda: compiled.sample_paths(
                    table, rng(args.seed).bit_generator, args.paths, args.max_steps
                ),
                args.repeats,
            )
            flat_py, off_py, trunc_py = sample_paths_py(
                table, rng(args.seed), args.paths, args.max_steps)
            flat_cy, off_cy, trunc_cy = compiled.sample_paths(
                table, rng(args.seed).bit_generator, args.paths, args.max_steps)
            same = (np.array_equal(flat_py, flat_cy)
                    and np.array_equal(off_py, off_cy)
                    and np.array_equal(trunc_py, trunc_cy.astype(bool)))
            line += (f" | compiled {args.paths / t_cy:12.0f} paths/s "
                     f"({t_cy * 1e3:8.2f} ms) | speedup {t_py / t_cy:6.1f}x "
                     f"| outputs match: {same}")
        print(line)


if __name__ == "__main__":
    main()
