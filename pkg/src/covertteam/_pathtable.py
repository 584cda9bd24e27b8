"""Flattened sampling tables and the pure-Python path-sampling kernel.

A SamplingTable compiles an (MDP, policy) pair into CSR-style arrays so a
trajectory can be drawn with two uniform deviates per step: one inverse-CDF
lookup over the policy's action distribution, one over the chosen action's
successor distribution.

The compiled kernel in ``_pathkernel`` consumes the same table and draws its
uniforms through numpy's ``bitgen_t.next_double``, which is exactly the stream
behind ``Generator.random()``; both kernels therefore produce bit-identical
paths from the same generator state. Keep the two loops in lockstep when
editing either.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .mdp import Mdp, State, StationaryPolicy


@dataclass
class SamplingTable:
    start: int
    absorbing: np.ndarray  # uint8[n_states]
    act_ptr: np.ndarray    # int64[n_states + 1]
    act_cum: np.ndarray    # float64[slots], per-state cumulative policy probs
    act_row: np.ndarray    # int64[slots], slot -> successor-row id
    tr_ptr: np.ndarray     # int64[n_rows + 1]
    tr_cum: np.ndarray     # float64[...], per-row cumulative successor probs
    tr_next: np.ndarray    # int64[...]
    states: Tuple[State, ...]
    index: Dict[State, int]


def build_table(m: Mdp, pol: StationaryPolicy) -> SamplingTable:
    """Flatten ``(m, pol)`` into arrays; zero-probability actions are dropped."""
    n = m.n_states
    act_ptr = np.zeros(n + 1, dtype=np.int64)
    act_cum: list[float] = []
    act_row: list[int] = []
    tr_ptr: list[int] = [0]
    tr_cum: list[float] = []
    tr_next: list[int] = []
    absorbing = np.zeros(n, dtype=np.uint8)

    for i, s in enumerate(m.states):
        absorbing[i] = 1 if m.is_absorbing(s) else 0
        acc = 0.0
        for a in m.actions_of[s]:
            pa = pol.prob(s, a)
            if pa <= 0.0:
                continue
            acc += pa
            act_cum.append(acc)
            act_row.append(len(tr_ptr) - 1)
            racc = 0.0
            for q, p in m.row(s, a).items():
                if p <= 0.0:
                    continue
                racc += p
                tr_cum.append(racc)
                tr_next.append(m.state_index[q])
            tr_ptr.append(len(tr_cum))
        act_ptr[i + 1] = len(act_cum)

    return SamplingTable(
        start=m.state_index[m.initial_state],
        absorbing=absorbing,
        act_ptr=act_ptr,
        act_cum=np.asarray(act_cum, dtype=np.float64),
        act_row=np.asarray(act_row, dtype=np.int64),
        tr_ptr=np.asarray(tr_ptr, dtype=np.int64),
        tr_cum=np.asarray(tr_cum, dtype=np.float64),
        tr_next=np.asarray(tr_next, dtype=np.int64),
        states=m.states,
        index=dict(m.state_index),
    )


def sample_paths_py(
    table: SamplingTable, rng: np.random.Generator, n_paths: int, max_steps: int
):
    """Reference kernel. Returns (flat state indices, offsets, truncated flags)."""
    act_ptr = table.act_ptr
    act_cum = table.act_cum
    act_row = table.act_row
    tr_ptr = table.tr_ptr
    tr_cum = table.tr_cum
    tr_next = table.tr_next
    absorbing = table.absorbing

    flat: list[int] = []
    offsets = np.empty(n_paths + 1, dtype=np.int64)
    truncated = np.zeros(n_paths, dtype=bool)
    offsets[0] = 0
    for p in range(n_paths):
        s = table.start
        flat.append(s)
        steps = 0
        while not absorbing[s] and steps < max_steps:
            u = rng.random()
            k = act_ptr[s]
            hi = act_ptr[s + 1]
            while k < hi - 1 and u >= act_cum[k]:
                k += 1
            row = act_row[k]
            u = rng.random()
            j = tr_ptr[row]
            hi = tr_ptr[row + 1]
            while j < hi - 1 and u >= tr_cum[j]:
                j += 1
            s = int(tr_next[j])
            flat.append(s)
            steps += 1
        truncated[p] = not absorbing[s]
        offsets[p + 1] = len(flat)
    return np.asarray(flat, dtype=np.int64), offsets, truncated
