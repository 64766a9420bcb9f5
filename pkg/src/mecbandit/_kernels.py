"""Compiled server-side admission rules.

Every policy (DEBO family and the independent-learner baselines) goes through
these functions, so capacity arbitration is identical across algorithms.

Conventions: ``choices`` hold 1-based server indices with 0 meaning idle;
``keys`` are i.i.d. uniform draws that define the random service order in a
slot (lower key is served first).
"""
import numpy as np
from numba import njit

CAPACITY_TOL = 1e-9


@njit(cache=True)
def admit_homogeneous_slot(choices, keys, caps, out):
    # Serving arrivals in uniformly random order and keeping the first M_j
    # per server yields a uniformly random size-M_j subset.
    used = np.zeros(caps.shape[0], np.int64)
    order = np.argsort(keys, kind="mergesort")
    for idx in order:
        j = choices[idx]
        out[idx] = False
        if j > 0 and used[j - 1] < caps[j - 1]:
            used[j - 1] += 1
            out[idx] = True


@njit(cache=True)
def admit_heterogeneous_slot(choices, keys, demands, caps, out):
    # Random-order greedy: a server stops admitting at the first arrival
    # whose demand would overflow its remaining capacity.
    K = caps.shape[0]
    used = np.zeros(K)
    closed = np.zeros(K, np.bool_)
    order = np.argsort(keys, kind="mergesort")
    for idx in order:
        j = choices[idx]
        out[idx] = False
        if j <= 0 or closed[j - 1]:
            continue
        if used[j - 1] + demands[idx] <= caps[j - 1] + CAPACITY_TOL:
            used[j - 1] += demands[idx]
            out[idx] = True
        else:
            closed[j - 1] = True


@njit(cache=True)
def admit_homogeneous(choices, keys, caps):
    n, N = choices.shape
    out = np.zeros((n, N), np.bool_)
    for s in range(n):
        admit_homogeneous_slot(choices[s], keys[s], caps, out[s])
    return out


@njit(cache=True)
def admit_heterogeneous(choices, keys, demands, caps):
    n, N = choices.shape
    out = np.zeros((n, N), np.bool_)
    for s in range(n):
        admit_heterogeneous_slot(choices[s], keys[s], demands, caps, out[s])
    return out


@njit(cache=True)
def admit_units(units, unit_server, keys, caps):
    """Unit-token arbitration used during random offloading.

    A server within capacity processes every arrival; an overloaded server
    processes one arrival per distinct requested unit, chosen by lowest key.
    ``units`` are 1-based unit indices (0 = idle).
    """
    n, N = units.shape
    K = caps.shape[0]
    M = unit_server.shape[0]
    out = np.zeros((n, N), np.bool_)
    load = np.zeros(K, np.int64)
    taken = np.zeros(M, np.bool_)
    for s in range(n):
        load[:] = 0
        taken[:] = False
        for i in range(N):
            u = units[s, i]
            if u > 0:
                load[unit_server[u - 1] - 1] += 1
        order = np.argsort(keys[s], kind="mergesort")
        for idx in order:
            u = units[s, idx]
            if u <= 0:
                continue
            j = unit_server[u - 1]
            if load[j - 1] <= caps[j - 1]:
                out[s, idx] = True
            elif not taken[u - 1]:
                taken[u - 1] = True
                out[s, idx] = True
    return out
