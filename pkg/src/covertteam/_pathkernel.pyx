# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled path-sampling kernel.

Mirrors ``_pathtable.sample_paths_py`` step for step and draws uniforms with
``bitgen_t.next_double``, the same source ``Generator.random()`` uses, so both
kernels advance the generator identically and emit bit-identical paths.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

cnp.import_array()


def sample_paths(table, bit_generator, Py_ssize_t n_paths, Py_ssize_t max_steps):
    """Draw ``n_paths`` trajectories; returns (flat indices, offsets, truncated)."""
    cdef const cnp.int64_t[::1] act_ptr = table.act_ptr
    cdef const cnp.float64_t[::1] act_cum = table.act_cum
    cdef const cnp.int64_t[::1] act_row = table.act_row
    cdef const cnp.int64_t[::1] tr_ptr = table.tr_ptr
    cdef const cnp.float64_t[::1] tr_cum = table.tr_cum
    cdef const cnp.int64_t[::1] tr_next = table.tr_next
    cdef const cnp.uint8_t[::1] absorbing = table.absorbing
    cdef Py_ssize_t start = table.start

    capsule = bit_generator.capsule
    cdef bitgen_t *bg = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")

    offsets_arr = np.empty(n_paths + 1, dtype=np.int64)
    truncated_arr = np.zeros(n_paths, dtype=np.uint8)
    cdef cnp.int64_t[::1] offsets = offsets_arr
    cdef cnp.uint8_t[::1] truncated = truncated_arr

    cdef Py_ssize_t cap = 1024
    flat_arr = np.empty(cap, dtype=np.int64)
    cdef cnp.int64_t[::1] flat = flat_arr

    cdef Py_ssize_t used = 0, p, s, steps, k, hi, row, j
    cdef double u

    offsets[0] = 0
    for p in range(n_paths):
        s = start
        if used == cap:
            cap *= 2
            flat_arr = _grow(flat_arr, cap)
            flat = flat_arr
        flat[used] = s
        used += 1
        steps = 0
        while absorbing[s] == 0 and steps < max_steps:
            u = bg.next_double(bg.state)
            k = act_ptr[s]
            hi = act_ptr[s + 1]
            while k < hi - 1 and u >= act_cum[k]:
                k += 1
            row = act_row[k]
            u = bg.next_double(bg.state)
            j = tr_ptr[row]
            hi = tr_ptr[row + 1]
            while j < hi - 1 and u >= tr_cum[j]:
                j += 1
            s = tr_next[j]
            if used == cap:
                cap *= 2
                flat_arr = _grow(flat_arr, cap)
                flat = flat_arr
            flat[used] = s
            used += 1
            steps += 1
        truncated[p] = 0 if absorbing[s] else 1
        offsets[p + 1] = used

    return flat_arr[:used].copy(), offsets_arr, truncated_arr.astype(bool)


cdef _grow(arr, Py_ssize_t cap):
    out = np.empty(cap, dtype=np.int64)
    out[: arr.shape[0]] = arr
    return out
