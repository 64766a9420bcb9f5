"""Offline benchmark solvers for the offloading assignment problems.

Assignments are integer arrays with one entry per user: 1..K for a server,
0 for unassigned.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateInstanceError, InfeasibleError, InstanceTooLargeError

EXHAUSTIVE_MAX_USERS = 12
GAP_TOL = 1e-12
_CAP_TOL = 1e-9


@dataclass(frozen=True)
class GapSummary:
    delta_min: float
    delta_user_min: float
    delta_prime_min: float
    delta1_min: float = float("inf")
    delta2_min: float = float("inf")
    optimum: float = float("nan")
    runner_up: float = float("nan")

    def as_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


@dataclass
class KnapsackResult:
    selected: tuple
    value: float
    nodes_expanded: int = 0
    bound_prunes: int = 0


@dataclass
class GapAssignment:
    assignment: np.ndarray
    value: float
    solves: list = field(default_factory=list)


def assignment_value(mu: np.ndarray, assignment) -> float:
    a = np.asarray(assignment)
    on = a > 0
    return float(mu[np.nonzero(on)[0], a[on] - 1].sum())


def unit_servers(capacities) -> np.ndarray:
    """1-based server index of every resource unit, in unit order."""
    caps = np.asarray(capacities, dtype=np.int64)
    return np.repeat(np.arange(1, len(caps) + 1), caps)


# -- OAP ---------------------------------------------------------------------

def _lsap(mu: np.ndarray, capacities) -> tuple[np.ndarray, float]:
    """Maximum-weight matching of users onto server unit copies."""
    N, _ = mu.shape
    units = unit_servers(capacities)
    M = len(units)
    if N > M:
        raise InfeasibleError(f"{N} users exceed the {M} available task slots")
    if N == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    weight = np.zeros((M, M))
    weight[:N] = mu[:, units - 1]
    # Negated costs; dummy rows carry zero reward.
    rows, cols = linear_sum_assignment(-weight)
    a = np.zeros(N, dtype=np.int64)
    for r, c in zip(rows, cols):
        if r < N:
            a[r] = units[c]
    return a, assignment_value(mu, a)


def solve_oap(mu, capacities, lexicographic: bool = True) -> tuple[np.ndarray, float]:
    """Optimal capacity-constrained assignment of every user to a server.

    With ``lexicographic`` the smallest assignment vector among all optima is
    returned, by fixing users one at a time to the smallest server that keeps
    the optimum attainable.
    """
    mu = np.asarray(mu, dtype=float)
    caps = np.asarray(capacities, dtype=np.int64)
    a, best = _lsap(mu, caps)
    if not lexicographic or mu.shape[0] <= 0:
        return a, best
    tol = 1e-9 * max(1.0, abs(best))
    N, K = mu.shape
    fixed = np.zeros(N, dtype=np.int64)
    residual = caps.copy()
    prefix = 0.0
    for i in range(N):
        for j in range(1, K + 1):
            if residual[j - 1] == 0:
                continue
            residual[j - 1] -= 1
            try:
                _, rest = _lsap(mu[i + 1:], residual)
            except InfeasibleError:
                residual[j - 1] += 1
                continue
            if prefix + mu[i, j - 1] + rest >= best - tol:
                fixed[i] = j
                prefix += mu[i, j - 1]
                break
            residual[j - 1] += 1
        else:  # pragma: no cover - the optimum is always re-attainable
            return a, best
    return fixed, assignment_value(mu, fixed)


def solve_fair_oap(mu, capacities, beta: float = 1.0,
                   transform: Optional[Callable[[np.ndarray], np.ndarray]] = None):
    """Proportional-fairness assignment maximizing sum of ln(1 + beta * mu).

    ``transform`` replaces the log utility (used to check that an identity
    transform reproduces :func:`solve_oap`).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    mu = np.asarray(mu, dtype=float)
    utility = transform(mu) if transform is not None else np.log1p(beta * mu)
    a, value = solve_oap(utility, capacities)
    return a, value


# -- gaps --------------------------------------------------------------------

def _assignment_blocks(N: int, K: int, block: int = 1 << 16):
    total = K ** N
    powers = K ** np.arange(N - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, block):
        codes = np.arange(start, min(total, start + block), dtype=np.int64)
        yield (codes[:, None] // powers[None, :]) % K


def top_two_values(mu, capacities) -> tuple[float, float]:
    """Best and second-best distinct compound reward over all feasible
    assignments (every user served), by exhaustive enumeration."""
    mu = np.asarray(mu, dtype=float)
    N, K = mu.shape
    if N > EXHAUSTIVE_MAX_USERS:
        raise InstanceTooLargeError(f"exhaustive enumeration limited to {EXHAUSTIVE_MAX_USERS} users")
    caps = np.asarray(capacities, dtype=np.int64)
    best, second = -np.inf, -np.inf
    rows = np.arange(N)
    for digits in _assignment_blocks(N, K):
        counts = np.stack([(digits == j).sum(axis=1) for j in range(K)], axis=1)
        ok = np.all(counts <= caps[None, :], axis=1)
        if not ok.any():
            continue
        vals = mu[rows[None, :], digits[ok]].sum(axis=1)
        top = vals.max()
        below = vals[vals < top - 1e-12 * max(1.0, abs(top))]
        pool = np.array([top, below.max() if below.size else -np.inf, best, second])
        best = pool.max()
        tol = 1e-12 * max(1.0, abs(best))
        lower = pool[pool < best - tol]
        second = lower.max() if lower.size else -np.inf
    if not np.isfinite(best):
        raise InfeasibleError("no feasible assignment")
    return float(best), float(second)


def user_gap(mu) -> float:
    """Smallest reward difference between two servers for the same user."""
    mu = np.asarray(mu, dtype=float)
    K = mu.shape[1]
    if K < 2:
        return float("inf")
    d = np.abs(mu[:, :, None] - mu[:, None, :])
    off = ~np.eye(K, dtype=bool)
    return float(d[:, off].min())


def cross_user_gaps(mu) -> tuple[float, float]:
    """The two cross-user increment gaps that govern the knapsack matching."""
    mu = np.asarray(mu, dtype=float)
    N, K = mu.shape
    if N < 2 or K < 2:
        return float("inf"), float("inf")
    pair = ~np.eye(N, dtype=bool)                       # i != i'
    jk = ~np.eye(K, dtype=bool)                         # j != k
    inc = mu[:, :, None] - mu[:, None, :]               # inc[i', j, k] = mu_i'j - mu_i'k
    # d1[i, i', j, k] = |mu_ij - (mu_i'j - mu_i'k)|
    d1 = np.abs(mu[:, None, :, None] - inc[None, :, :, :])
    mask1 = pair[:, :, None, None] & jk[None, None, :, :]
    delta1 = float(d1[mask1].min())
    # d2[i, i', j, j', k] = |(mu_ij - mu_ij') - (mu_i'j - mu_i'k)|
    d2 = np.abs(inc[:, None, :, :, None] - inc[None, :, :, None, :])
    mask2 = (pair[:, :, None, None, None] & jk[None, None, :, :, None]
             & jk[None, None, :, None, :])
    delta2 = float(d2[mask2].min())
    return delta1, delta2


def compute_gaps(mu, capacities, delta_min_override: Optional[float] = None) -> GapSummary:
    mu = np.asarray(mu, dtype=float)
    best, second = top_two_values(mu, capacities)
    delta_min = best - second if np.isfinite(second) else float("inf")
    if delta_min_override is not None:
        delta_min = float(delta_min_override)
    d_user = user_gap(mu)
    d1, d2 = cross_user_gaps(mu)
    d_prime = min(d1, d2, d_user)
    # delta_prime_min only matters for the heterogeneous scheme and is checked
    # where that scheme derives its exploration length.
    for name, value in (("delta_min", delta_min), ("delta_user_min", d_user)):
        if value <= GAP_TOL:
            raise DegenerateInstanceError(f"gap is {value:.3g}; rewards must be distinct", name)
    return GapSummary(delta_min, d_user, d_prime, d1, d2, best, second)


# -- knapsack ----------------------------------------------------------------

def solve_knapsack_exact(values, weights, capacity: float) -> KnapsackResult:
    """Exact 0/1 knapsack by best-first branch and bound.

    Nodes are explored in order of their fractional-relaxation bound; items
    with non-positive value or weight above capacity are dropped up front.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    cand = [i for i in range(len(values)) if values[i] > 0 and weights[i] <= capacity + _CAP_TOL]
    if not cand:
        return KnapsackResult((), 0.0)
    cand.sort(key=lambda i: (-values[i] / weights[i], i))
    v = [float(values[i]) for i in cand]
    w = [float(weights[i]) for i in cand]
    n = len(cand)
    cap = capacity + _CAP_TOL

    def bound(level, value, weight):
        room = cap - weight
        b = value
        for k in range(level, n):
            if w[k] <= room:
                room -= w[k]
                b += v[k]
            else:
                return b + v[k] * room / w[k]
        return b

    # Greedy incumbent.
    best_val, best_set, room = 0.0, [], cap
    for k in range(n):
        if w[k] <= room:
            room -= w[k]
            best_val += v[k]
            best_set.append(k)

    nodes = prunes = 0
    counter = itertools.count()
    heap = [(-bound(0, 0.0, 0.0), next(counter), 0, 0.0, 0.0, ())]
    while heap:
        neg_b, _, level, value, weight, taken = heapq.heappop(heap)
        if -neg_b <= best_val + 1e-12:
            prunes += 1 + len(heap)
            break
        nodes += 1
        if level == n:
            continue
        if weight + w[level] <= cap:
            inc_val = value + v[level]
            inc_taken = taken + (level,)
            if inc_val > best_val + 1e-12:
                best_val, best_set = inc_val, list(inc_taken)
            b = bound(level + 1, inc_val, weight + w[level])
            if b > best_val + 1e-12:
                heapq.heappush(heap, (-b, next(counter), level + 1, inc_val, weight + w[level], inc_taken))
            else:
                prunes += 1
        b = bound(level + 1, value, weight)
        if b > best_val + 1e-12:
            heapq.heappush(heap, (-b, next(counter), level + 1, value, weight, taken))
        else:
            prunes += 1
    selected = tuple(sorted(cand[k] for k in best_set))
    return KnapsackResult(selected, float(values[list(selected)].sum()) if selected else 0.0,
                          nodes, prunes)


# -- heterogeneous assignment ------------------------------------------------

def _check_hetero(mu, demands, capacities):
    mu = np.asarray(mu, dtype=float)
    demands = np.asarray(demands, dtype=float)
    capacities = np.asarray(capacities, dtype=float)
    if demands.shape[0] != mu.shape[0] or capacities.shape[0] != mu.shape[1]:
        raise ValueError("shape mismatch between rewards, demands and capacities")
    if demands.max() > capacities.min() + _CAP_TOL:
        raise InfeasibleError("largest demand exceeds the smallest server capacity")
    return mu, demands, capacities


def incremental_rewards(mu, indicator, j: int) -> np.ndarray:
    """Improvement for every user of moving to server ``j`` (1-based)."""
    col = mu[:, j - 1]
    cur = np.where(indicator > 0, mu[np.arange(len(indicator)), np.maximum(indicator - 1, 0)], 0.0)
    return col - cur


def solve_gap_2approx(mu, demands, capacities, knapsack=solve_knapsack_exact) -> GapAssignment:
    """Sequential per-server knapsacks over incremental rewards.

    Servers are visited in index order; with exact knapsack solves the final
    indicator is a 2-approximation of the heterogeneous optimum.
    """
    mu, demands, capacities = _check_hetero(mu, demands, capacities)
    N, K = mu.shape
    indicator = np.zeros(N, dtype=np.int64)
    solves = []
    for j in range(1, K + 1):
        gain = incremental_rewards(mu, indicator, j)
        res = knapsack(gain, demands, capacities[j - 1])
        indicator[list(res.selected)] = j
        solves.append(res)
    return GapAssignment(indicator, assignment_value(mu, indicator), solves)


def solve_gap_exact(mu, demands, capacities) -> GapAssignment:
    """Exact heterogeneous optimum by depth-first search.

    Users may stay unassigned. Pruning combines residual-capacity feasibility
    with the smaller of two bounds: each remaining user's best reward, and a
    fractional fill of the total residual capacity.
    """
    mu, demands, capacities = _check_hetero(mu, demands, capacities)
    N, K = mu.shape
    if N > EXHAUSTIVE_MAX_USERS:
        raise InstanceTooLargeError(f"exact search limited to {EXHAUSTIVE_MAX_USERS} users")
    best_each = mu.max(axis=1)
    order = sorted(range(N), key=lambda i: (-best_each[i], i))
    suffix = np.zeros(N + 1)
    for pos in range(N - 1, -1, -1):
        suffix[pos] = suffix[pos + 1] + best_each[order[pos]]
    ratio_order = sorted(range(N), key=lambda i: (-best_each[i] / demands[i], i))
    pos_of = {u: p for p, u in enumerate(order)}
    server_pref = [sorted(range(K), key=lambda j: (-mu[i, j], j)) for i in range(N)]

    def frac_bound(level, room):
        b = 0.0
        for u in ratio_order:
            if pos_of[u] < level:
                continue
            if demands[u] <= room:
                room -= demands[u]
                b += best_each[u]
            else:
                return b + best_each[u] * max(room, 0.0) / demands[u]
        return b

    seed = solve_gap_2approx(mu, demands, capacities)
    best = [seed.value, seed.assignment.copy()]
    residual = capacities.astype(float).copy()
    current = np.zeros(N, dtype=np.int64)

    def dfs(level, value):
        if level == N:
            if value > best[0] + 1e-12:
                best[0] = value
                best[1] = current.copy()
            return
        if value + min(suffix[level], frac_bound(level, residual.sum())) <= best[0] + 1e-12:
            return
        i = order[level]
        for j in server_pref[i]:
            if demands[i] <= residual[j] + _CAP_TOL:
                residual[j] -= demands[i]
                current[i] = j + 1
                dfs(level + 1, value + mu[i, j])
                current[i] = 0
                residual[j] += demands[i]
        dfs(level + 1, value)

    dfs(0, 0.0)
    return GapAssignment(best[1], assignment_value(mu, best[1]))
