"""Epoch-based offloading with heterogeneous resource demands (H-DEBO).

Users explore in fixed-size groups on a round-robin schedule, servers then
run one knapsack each over estimated incremental rewards, and the resulting
indicator is exploited for the rest of the epoch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .debo import EstimatorState, _cap
from .env import HETEROGENEOUS, MECEnvironment
from .errors import ConfigError, DegenerateInstanceError, InfeasibleError
from .oracle import GAP_TOL, cross_user_gaps, solve_gap_2approx, user_gap
from .trace import EXPLOIT, EXPLORE, MATCH, EpochRecord, RunTrace

_TOL = 1e-9


@dataclass(frozen=True)
class HeteroParams:
    m_bar_min: int
    m_bar_max: float
    n_groups: int
    t1: int
    delta_prime: float = float("nan")

    def __post_init__(self):
        if self.m_bar_min < 1:
            raise ConfigError("largest demand exceeds the smallest server capacity", "resource_demand")
        if self.n_groups < 1 or self.t1 < 1:
            raise ConfigError("group count and exploration length must be >= 1", "hdebo")


def group_size(demands, capacities) -> int:
    """Largest group size whose total demand fits every server."""
    return int(math.floor(np.min(capacities) / np.max(demands) + _TOL))


def group_of(i: int, m_bar_min: int) -> int:
    """Group of the 1-based user index ``i``."""
    return -(-i // m_bar_min)


def theorem5_t1(delta_prime: float, m_bar_max: float, K: int, N: int, n_groups: int,
                r_upper: float, r_lower: float, t1_cap: Optional[int] = None) -> int:
    if not delta_prime > 0:
        raise DegenerateInstanceError("must be > 0 to size exploration", "delta_prime_min")
    factor = K if n_groups <= K else K + N
    t1 = math.ceil(25 * m_bar_max ** 2 * (r_upper - r_lower) ** 2 / (2 * delta_prime ** 2) * factor)
    return _cap(t1, t1_cap)


def delta_prime_min(mu) -> float:
    d1, d2 = cross_user_gaps(mu)
    return min(d1, d2, user_gap(mu))


def hetero_params(mu, demands, capacities, r_upper: float, r_lower: float,
                  t1_cap: Optional[int] = None, delta_prime_override: Optional[float] = None) -> HeteroParams:
    demands = np.asarray(demands, dtype=float)
    capacities = np.asarray(capacities, dtype=float)
    if demands.max() > capacities.min() + _TOL:
        raise InfeasibleError("largest demand exceeds the smallest server capacity")
    N, K = np.shape(mu)
    m_min = group_size(demands, capacities)
    m_max = float(capacities.max() / demands.min())
    n_groups = -(-N // m_min)
    dp = delta_prime_override if delta_prime_override is not None else delta_prime_min(mu)
    if dp <= GAP_TOL:
        raise DegenerateInstanceError(f"gap is {dp:.3g}; increments must be distinct", "delta_prime_min")
    t1 = theorem5_t1(dp, m_max, K, N, n_groups, r_upper, r_lower, t1_cap)
    return HeteroParams(m_min, m_max, n_groups, t1, dp)


def explore_target(t: int, k: int, K: int, n_groups: int) -> int:
    """Server visited by group ``k`` in exploration slot ``t`` (both 1-based).

    Groups are split into blocks of ``K``; blocks take turns over periods of
    ``K + 1`` slots, and inside its period a group cycles through every
    server once plus one idle slot. Returns 0 when idle.
    """
    if not 1 <= k <= n_groups:
        raise ValueError("group index out of range")
    period = K + 1
    block, rel = divmod(k - 1, K)
    n_blocks = -(-n_groups // K)
    if ((t - 1) // period) % n_blocks != block:
        return 0
    return ((t - 1) % period + rel + 1) % period


def exploration_choices(t1: int, groups: np.ndarray, K: int, n_groups: int, start: int = 1) -> np.ndarray:
    """Choices of every user over ``t1`` exploration slots."""
    t = np.arange(start, start + t1)[:, None]
    g = np.asarray(groups)[None, :]
    period = K + 1
    block, rel = np.divmod(g - 1, K)
    n_blocks = -(-n_groups // K)
    on = ((t - 1) // period) % n_blocks == block
    return np.where(on, ((t - 1) % period + rel + 1) % period, 0).astype(np.int64)


def run_hdebo_exploration(est: EstimatorState, env: MECEnvironment, params: HeteroParams, t1: int,
                          rng: np.random.Generator, active=None):
    """Group round-robin exploration; returns ``(est, (choices, processed, rewards))``."""
    N = env.n_users
    groups = np.array([group_of(i, params.m_bar_min) for i in range(1, N + 1)])
    choices = exploration_choices(t1, groups, env.n_servers, params.n_groups)
    if active is not None:
        keep = np.zeros(N, dtype=bool)
        keep[active] = True
        choices[:, ~keep] = 0
    processed, rewards = env.play(choices, rng)
    est.update(choices, processed, rewards)
    return est, (choices, processed, rewards)


@dataclass
class HeteroMatching:
    assignment: np.ndarray
    rounds: list          # indicator after each server's knapsack
    solves: list          # KnapsackResult per server
    estimated_values: list  # compound estimated reward after each round


def run_hdebo_matching(r_tilde, demands, capacities) -> HeteroMatching:
    """Sequential server-side knapsacks over estimated incremental rewards."""
    r = np.asarray(r_tilde, dtype=float)
    res = solve_gap_2approx(r, demands, capacities)
    # Replay to expose the per-round indicators.
    indicator = np.zeros(r.shape[0], dtype=np.int64)
    rounds, values = [], []
    for j, s in enumerate(res.solves, start=1):
        indicator[list(s.selected)] = j
        rounds.append(indicator.copy())
        on = indicator > 0
        values.append(float(r[np.nonzero(on)[0], indicator[on] - 1].sum()))
    return HeteroMatching(res.assignment, rounds, res.solves, values)


def run_hdebo(env: MECEnvironment, demands, capacities, horizon: int, rng: np.random.Generator,
              params: Optional[HeteroParams] = None, t1_cap: Optional[int] = None) -> RunTrace:
    """H-DEBO over ``horizon`` slots."""
    if env.capacity_model != HETEROGENEOUS:
        raise ConfigError("requires the heterogeneous capacity model", "capacity_model")
    demands = np.asarray(demands, dtype=float)
    capacities = np.asarray(capacities, dtype=float)
    if params is None:
        params = hetero_params(env.mu, demands, capacities, env.reward_upper, env.reward_lower, t1_cap)
    N, K = env.n_users, env.n_servers
    trace = RunTrace("hdebo", horizon, env.mu, [u.id for u in env.users])
    est = EstimatorState(N, K)
    n = 0
    while not trace.full:
        n += 1
        rec = EpochRecord(n=n, start=trace.t, t2=K)
        trace.epochs.append(rec)
        t1 = min(params.t1, trace.remaining)
        _, (ch, pr, rw) = run_hdebo_exploration(est, env, params, t1, rng)
        rec.t1 = trace.append(ch, pr, rw, EXPLORE, n)
        if trace.full:
            break

        r_tilde, holes = est.estimate(env.reward_lower)
        rec.holes = int(holes.sum())
        match = run_hdebo_matching(r_tilde, demands, capacities)
        block = np.array(match.rounds, dtype=np.int64)
        pr, rw = env.play(block, rng)
        rec.match_slots = trace.append(block, pr, rw, MATCH, n)
        rec.assignment = tuple(int(a) for a in match.assignment)
        rec.extras.update(
            indicators=[tuple(int(x) for x in r) for r in match.rounds],
            estimated_values=match.estimated_values,
            knapsack_nodes=[s.nodes_expanded for s in match.solves],
            knapsack_prunes=[s.bound_prunes for s in match.solves],
        )
        if trace.full:
            break

        block = np.repeat(match.assignment[None, :], min(2 ** n, trace.remaining), axis=0)
        pr, rw = env.play(block, rng)
        rec.exploit_slots = trace.append(block, pr, rw, EXPLOIT, n)
    trace.meta.update(m_bar_min=params.m_bar_min, m_bar_max=params.m_bar_max,
                      n_groups=params.n_groups, t1=params.t1, delta_prime=params.delta_prime,
                      n_epochs=n)
    return trace
