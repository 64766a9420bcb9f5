"""Exhaustive reference solvers used only by the tests.

They share no code with the package so that agreement is meaningful.
"""
import itertools

import numpy as np


def all_assignments(N, K, allow_idle=False):
    choices = range(0 if allow_idle else 1, K + 1)
    return itertools.product(choices, repeat=N)


def oap_values(mu, caps):
    """Compound reward of every feasible full assignment (slot capacities)."""
    N, K = mu.shape
    out = {}
    for a in all_assignments(N, K):
        counts = np.bincount(a, minlength=K + 1)[1:]
        if np.all(counts <= caps):
            out[a] = sum(mu[i, a[i] - 1] for i in range(N))
    return out


def oap_brute(mu, caps):
    vals = oap_values(mu, caps)
    best = max(vals.values())
    return best, vals


def two_best(mu, caps):
    vals = sorted(set(round(v, 12) for v in oap_values(mu, caps).values()), reverse=True)
    return vals[0], (vals[1] if len(vals) > 1 else float("-inf"))


def knapsack_brute(values, weights, cap):
    n = len(values)
    best, best_set = 0.0, ()
    for r in range(n + 1):
        for s in itertools.combinations(range(n), r):
            w = sum(weights[i] for i in s)
            v = sum(values[i] for i in s)
            if w <= cap + 1e-9 and v > best + 1e-12:
                best, best_set = v, s
    return best, best_set


def gap_brute(mu, demands, caps):
    """Exact heterogeneous optimum; users may stay unassigned."""
    N, K = mu.shape
    best, arg = 0.0, (0,) * N
    for a in all_assignments(N, K, allow_idle=True):
        load = np.zeros(K)
        for i, j in enumerate(a):
            if j:
                load[j - 1] += demands[i]
        if np.all(load <= caps + 1e-9):
            v = sum(mu[i, j - 1] for i, j in enumerate(a) if j)
            if v > best + 1e-12:
                best, arg = v, a
    return best, arg


def ro_success_probability(N, caps):
    """Exact success probability of one random-offloading slot on each server.

    Every user draws one of M units uniformly. A server whose arrivals do not
    exceed its capacity serves everyone; otherwise one arrival per requested
    unit is served, uniformly among those requesting it. For a tagged user on
    unit u of server j, the other N - 1 users split multinomially into
    ``a`` on the same unit, ``b`` on the other units of j, and the rest.
    Returns the probability of drawing server j and being served, per j.
    """
    from math import comb

    M = sum(caps)
    out = []
    for c in caps:
        p_same, p_other = 1 / M, (c - 1) / M
        p_rest = 1 - p_same - p_other
        total = 0.0
        for a in range(N):
            for b in range(N - a):
                rest = N - 1 - a - b
                w = comb(N - 1, a) * comb(N - 1 - a, b) * p_same ** a * p_other ** b * p_rest ** rest
                served = 1.0 if 1 + a + b <= c else 1.0 / (1 + a)
                total += w * served
        out.append(c / M * total)
    return np.array(out)


def ro_success_enumerated(N, caps):
    """Same quantity by enumerating every draw pattern (small N and M only)."""
    owner = [j for j, c in enumerate(caps) for _ in range(c)]
    M = len(owner)
    K = len(caps)
    prob = np.zeros(K)
    for draw in itertools.product(range(M), repeat=N):
        load = [0] * K
        for u in draw:
            load[owner[u]] += 1
        u = draw[0]
        j = owner[u]
        prob[j] += 1.0 if load[j] <= caps[j] else 1.0 / draw.count(u)
    return prob / M ** N


def _grid(N, choices):
    return np.array(list(itertools.product(choices, repeat=N)), dtype=np.int64).reshape(-1, N)


def _exact_max(terms, ok):
    """Largest correctly rounded row sum of ``terms`` among feasible rows.

    Rows are ranked with fast float sums, then the near-best ones are
    re-summed with ``math.fsum`` so the result does not depend on the
    summation order.
    """
    from math import fsum

    rough = np.where(ok, terms.sum(axis=1), -np.inf)
    near = np.nonzero(rough >= rough.max() - 1e-9)[0]
    return max(fsum(terms[k]) for k in near)


def oap_brute_np(mu, caps):
    """Vectorized exhaustive OAP optimum value."""
    N, K = mu.shape
    a = _grid(N, range(1, K + 1))
    counts = np.stack([(a == j).sum(axis=1) for j in range(1, K + 1)], axis=1)
    ok = np.all(counts <= np.asarray(caps), axis=1)
    return _exact_max(mu[np.arange(N), a - 1], ok)


def knapsack_brute_np(values, weights, cap):
    n = len(values)
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    ok = bits @ np.asarray(weights, dtype=float) <= cap + 1e-9
    return _exact_max(bits * np.asarray(values, dtype=float), ok)


def gap_brute_np(mu, demands, caps):
    N, K = mu.shape
    a = _grid(N, range(K + 1))
    load = np.stack([((a == j) * np.asarray(demands)).sum(axis=1) for j in range(1, K + 1)], axis=1)
    ok = np.all(load <= np.asarray(caps) + 1e-9, axis=1)
    return _exact_max(np.where(a > 0, mu[np.arange(N), np.maximum(a - 1, 0)], 0.0), ok)
