"""Decentralized epoch-based offloading: random exploration, auction matching
and exploitation, with the parameter formulas that make it converge."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from .env import MECEnvironment
from .oracle import GapSummary, unit_servers
from .trace import EXPLOIT, EXPLORE, MATCH, EpochRecord, RunTrace


@dataclass(frozen=True)
class EpochParams:
    epsilon: float
    t1: int
    t2: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.t1 < 1 or self.t2 < 1:
            raise ValueError("t1 and t2 must be at least 1")

    @staticmethod
    def exploit_len(n: int) -> int:
        return 2 ** n


def _cap(t1: int, t1_cap: Optional[int]) -> int:
    return min(t1, int(t1_cap)) if t1_cap else t1


def _increment(dmin: float, dusr: float, N: int, K: int, r_upper: float) -> float:
    # With one server the per-user gap is infinite and only the compound gap
    # term remains; with a single feasible assignment any increment works.
    terms = [dmin / (5 * N)]
    if math.isfinite(dusr):
        terms.append(dusr / K - 3 * dmin / (4 * N * K))
    eps = max(terms)
    return eps if math.isfinite(eps) else float(r_upper)


def matching_budget(N: int, M: int, eps: float, r_upper: float) -> int:
    return math.ceil(N * M + N * M * r_upper / eps)


def theorem1_params(gaps: GapSummary, N: int, M: int, M_min: int, K: int,
                    r_upper: float, r_lower: float, t1_cap: Optional[int] = None) -> EpochParams:
    """Bid increment, exploration length and matching budget for known gaps."""
    dmin, dusr = gaps.delta_min, gaps.delta_user_min
    eps = _increment(dmin, dusr, N, K, r_upper)
    spread = r_upper - r_lower
    t1 = math.ceil(81 * M ** 2 / (2 * M_min ** 2))
    if math.isfinite(dmin):
        t1 = max(t1, math.ceil(128 * N ** 2 * M * spread ** 2 / (9 * dmin ** 2 * M_min)))
    return EpochParams(eps, _cap(t1, t1_cap), matching_budget(N, M, eps, r_upper))


class EstimatorState:
    """Cumulative success counts ``V`` and reward sums ``S`` per (user, server)."""

    def __init__(self, n_users: int, n_servers: int):
        self.V = np.zeros((n_users, n_servers), dtype=np.int64)
        self.S = np.zeros((n_users, n_servers), dtype=float)

    def update(self, choices, processed, rewards):
        choices = np.atleast_2d(choices)
        ok = np.atleast_2d(processed) & (choices > 0)
        _, users = np.nonzero(ok)
        servers = choices[ok].astype(np.int64) - 1
        np.add.at(self.V, (users, servers), 1)
        np.add.at(self.S, (users, servers), np.atleast_2d(rewards)[ok])

    def estimate(self, fill: float):
        """``S / V`` elementwise; unexplored entries get ``fill``. Returns
        the estimate and the boolean mask of unexplored entries."""
        holes = self.V == 0
        est = np.divide(self.S, self.V, out=np.full(self.S.shape, float(fill)), where=~holes)
        return est, holes

    def drop(self, users):
        self.V[users] = 0
        self.S[users] = 0.0


def run_ro(est: EstimatorState, env: MECEnvironment, capacities, t1: int,
           rng: np.random.Generator, active=None):
    """Random offloading for ``t1`` slots.

    Each active user draws a resource unit uniformly from ``[1, M]`` and
    offloads to the unit's server. Processed observations update ``est`` in
    place. Returns ``(est, (choices, processed, rewards))``.
    """
    N = env.n_users
    units_of = unit_servers(capacities)
    M = len(units_of)
    active = np.arange(N) if active is None else np.asarray(active)
    units = np.zeros((t1, N), dtype=np.int64)
    units[:, active] = rng.integers(1, M + 1, size=(t1, len(active)))
    processed = env.admit_units(units, units_of, rng)
    choices = np.where(units > 0, units_of[np.maximum(units - 1, 0)], 0)
    rewards = env.observe(choices, processed, rng)
    est.update(choices, processed, rewards)
    return est, (choices, processed, rewards)


# -- auction -----------------------------------------------------------------

@dataclass
class AuctionState:
    unit_rewards: np.ndarray  # R, (N, M)
    bids: np.ndarray          # B, (N, M)
    held_unit: np.ndarray     # a, (N,), 1-based unit or 0
    unit_server: np.ndarray   # (M,), 1-based server of each unit

    @property
    def unit_prices(self) -> np.ndarray:
        return self.bids.max(axis=0) if self.bids.shape[0] else np.zeros(self.bids.shape[1])

    @property
    def server_prices(self) -> np.ndarray:
        eta = self.unit_prices
        K = int(self.unit_server.max()) if len(self.unit_server) else 0
        return np.array([eta[self.unit_server == j].min() if np.any(self.unit_server == j) else 0.0
                         for j in range(1, K + 1)])


@dataclass
class AuctionResult:
    assignment: np.ndarray  # 1-based server per user, 0 if unassigned
    rounds: int
    terminated: bool
    state: AuctionState
    choices: np.ndarray     # (rounds, N)
    processed: np.ndarray   # (rounds, N)


@njit(cache=True)
def _bid(R_i, B_i, unit_server, eps):
    M = R_i.shape[0]
    m_star = 0
    for m in range(1, M):
        if R_i[m] - B_i[m] > R_i[m_star] - B_i[m_star]:
            m_star = m
    m_alt = -1
    for m in range(M):
        if unit_server[m] != unit_server[m_star]:
            if m_alt < 0 or R_i[m] - B_i[m] > R_i[m_alt] - B_i[m_alt]:
                m_alt = m
    if m_alt < 0:
        return m_star, B_i[m_star] + eps
    return m_star, R_i[m_star] - (R_i[m_alt] - B_i[m_alt]) + eps


def user_bid(R_i: np.ndarray, B_i: np.ndarray, unit_server: np.ndarray, eps: float):
    """Local bidding rule of one unassigned user.

    Uses only the user's own reward and bid vectors. Returns the 0-based unit
    to bid on and the new bid. The runner-up unit is searched on other
    servers only; with a single server the bid is raised by ``eps``.
    """
    m, b = _bid(np.asarray(R_i, dtype=float), np.asarray(B_i, dtype=float),
                np.asarray(unit_server, dtype=np.int64), float(eps))
    return int(m), float(b)


@njit(cache=True)
def _auction(R, B, held, holder, unit_server, t2, eps, rec_choices, rec_processed):
    # Users act in index order within a round; servers then arbitrate every
    # targeted unit against its incumbent.
    N, M = R.shape
    record = rec_choices.shape[0] > 0
    target = np.empty(N, np.int64)
    best = np.empty(M, np.int64)
    rounds = 0
    while rounds < t2:
        waiting = False
        for i in range(N):
            if held[i] == 0:
                waiting = True
                break
        if not waiting:
            break
        for m in range(M):
            best[m] = holder[m]
        for i in range(N):
            target[i] = -1
            if held[i] == 0:
                m, b = _bid(R[i], B[i], unit_server, eps)
                B[i, m] = b
                target[i] = m
                # Strictly higher bid wins; ties keep the lower index, which
                # is the incumbent or an earlier challenger.
                w = best[m]
                if w < 0 or b > B[w, m] or (b == B[w, m] and i < w):
                    best[m] = i
        if record:
            for i in range(N):
                if held[i] > 0:
                    rec_choices[rounds, i] = unit_server[held[i] - 1]
                elif target[i] >= 0:
                    rec_choices[rounds, i] = unit_server[target[i]]
        for m in range(M):
            w = best[m]
            if w >= 0 and w != holder[m]:
                if holder[m] >= 0:
                    held[holder[m]] = 0
                holder[m] = w
                held[w] = m + 1
        if record:
            for i in range(N):
                rec_processed[rounds, i] = held[i] > 0
        rounds += 1
    return rounds


def run_dauction(r_tilde, capacities, t2: int, eps: float, rng=None, record: bool = True) -> AuctionResult:
    """Decentralized auction over resource units.

    One round is one slot: every unassigned user bids on its best unit and
    offloads there; each server keeps, per unit, the highest bidder (incumbent
    included, ties to the lowest user index) and abandons the rest. Stops
    when every user holds a unit or after ``t2`` rounds. The auction is
    deterministic; ``rng`` is accepted for call-site symmetry and unused.
    With ``record`` the per-round choices and processed flags are returned.
    """
    r = np.asarray(r_tilde, dtype=float)
    N = r.shape[0]
    units = unit_servers(capacities)
    M = len(units)
    R = np.ascontiguousarray(r[:, units - 1]) if N else np.zeros((0, M))
    B = np.zeros((N, M))
    held = np.zeros(N, dtype=np.int64)
    holder = np.full(M, -1, dtype=np.int64)
    rows = int(t2) if record else 0
    rec_choices = np.zeros((rows, N), dtype=np.int64)
    rec_processed = np.zeros((rows, N), dtype=bool)
    rounds = _auction(R, B, held, holder, units, int(t2), float(eps), rec_choices, rec_processed)
    assignment = np.where(held > 0, units[np.maximum(held - 1, 0)], 0)
    return AuctionResult(
        assignment=assignment,
        rounds=int(rounds),
        terminated=bool(np.all(held > 0)),
        state=AuctionState(R, B, held, units),
        choices=rec_choices[:rounds],
        processed=rec_processed[:rounds],
    )


def verify_eps_cs(state: AuctionState, eps: float, tol: float = 1e-9) -> bool:
    """Check epsilon complementary slackness of a terminated auction."""
    if np.any(state.held_unit == 0):
        return False
    server_price = state.server_prices
    price_per_unit = server_price[state.unit_server - 1]
    net = state.unit_rewards - price_per_unit[None, :]
    mine = net[np.arange(net.shape[0]), state.held_unit - 1]
    return bool(np.all(mine >= net.max(axis=1) - eps - tol))


# -- epoch loop --------------------------------------------------------------

Schedule = Callable[[int, np.ndarray], EpochParams]


def run_epochs(env: MECEnvironment, capacities, horizon: int, schedule: Schedule,
               rng: np.random.Generator, *, algorithm: str = "debo",
               transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
               population: Optional[Callable[[int], np.ndarray]] = None,
               match_full_budget: bool = False) -> RunTrace:
    """Shared epoch loop behind DEBO and its extensions.

    ``schedule(n, active)`` yields the epoch parameters, ``transform`` maps
    estimates before the auction, and ``population(n)`` returns the indices
    of users present in epoch ``n`` (all users when omitted).
    """
    N = env.n_users
    caps = np.asarray(capacities, dtype=np.int64)
    trace = RunTrace(algorithm, horizon, env.mu, [u.id for u in env.users])
    est = EstimatorState(N, env.n_servers)
    everyone = np.arange(N)
    previous = everyone if population is None else np.array([], dtype=np.int64)
    n = 0
    while not trace.full:
        n += 1
        active = everyone if population is None else np.asarray(population(n), dtype=np.int64)
        left = np.setdiff1d(previous, active)
        if left.size:
            est.drop(left)
        previous = active
        present = np.zeros(N, dtype=bool)
        present[active] = True

        params = schedule(n, active)
        rec = EpochRecord(n=n, start=trace.t, epsilon=params.epsilon, t2=params.t2)
        trace.epochs.append(rec)

        t1 = min(params.t1, trace.remaining)
        _, (ch, pr, rw) = run_ro(est, env, caps, t1, rng, active)
        rec.t1 = trace.append(ch, pr, rw, EXPLORE, n, present)
        if trace.full:
            break

        r_tilde, holes = est.estimate(env.reward_lower)
        rec.holes = int(holes[active].sum())
        inputs = r_tilde[active]
        if transform is not None:
            inputs = transform(inputs)
        auction = run_dauction(inputs, caps, min(params.t2, trace.remaining), params.epsilon)
        ch = np.zeros((auction.rounds, N), dtype=np.int64)
        pr = np.zeros((auction.rounds, N), dtype=bool)
        ch[:, active] = auction.choices
        pr[:, active] = auction.processed
        rw = env.observe(ch, pr, rng)
        rec.match_slots = trace.append(ch, pr, rw, MATCH, n, present)
        assignment = np.zeros(N, dtype=np.int64)
        assignment[active] = auction.assignment
        rec.terminated = auction.terminated
        rec.extras["auction_rounds"] = auction.rounds
        if auction.terminated:
            rec.assignment = tuple(int(a) for a in assignment)
        if trace.full:
            break

        hold = params.t2 - auction.rounds if match_full_budget else 0
        if hold > 0:
            block = np.repeat(assignment[None, :], min(hold, trace.remaining), axis=0)
            pr, rw = env.play(block, rng)
            rec.match_slots += trace.append(block, pr, rw, MATCH, n, present)
            if trace.full:
                break

        block = np.repeat(assignment[None, :], min(EpochParams.exploit_len(n), trace.remaining), axis=0)
        pr, rw = env.play(block, rng)
        rec.exploit_slots = trace.append(block, pr, rw, EXPLOIT, n, present)
    trace.meta["n_epochs"] = n
    return trace


def run_debo(env: MECEnvironment, capacities, horizon: int, params: EpochParams,
             rng: np.random.Generator, **kwargs) -> RunTrace:
    """DEBO with fixed epoch parameters."""
    trace = run_epochs(env, capacities, horizon, lambda n, active: params, rng, **kwargs)
    trace.meta.update(epsilon=params.epsilon, t1=params.t1, t2=params.t2)
    return trace
