"""DEBO variants: unknown gaps (U-DEBO), users entering and leaving (D-DEBO)
and a proportional-fairness objective (F-DEBO)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .debo import EpochParams, _cap, run_epochs, theorem1_params
from .env import MECEnvironment, UserProfile
from .errors import ConfigError
from .oracle import compute_gaps
from .trace import RunTrace


# -- U-DEBO ------------------------------------------------------------------

@dataclass(frozen=True)
class UDeboSchedule:
    c0: float = 0.5
    c1: float = 50.0
    vartheta: float = 0.5

    def __post_init__(self):
        if not self.c0 > 0:
            raise ConfigError("must be > 0", "c0")
        if not self.c1 >= 1:
            raise ConfigError("must be >= 1", "c1")
        if not 0 < self.vartheta < 1:
            raise ConfigError("must lie in (0, 1)", "vartheta")


def udebo_schedule(n: int, sched: UDeboSchedule, N: int, M: int, r_upper: float) -> EpochParams:
    """Gap-free epoch parameters: a shrinking increment and growing exploration."""
    if n < 1:
        raise ValueError("epoch index starts at 1")
    eps = sched.c0 * n ** -sched.vartheta
    t1 = math.ceil(sched.c1 * n ** sched.vartheta)
    return EpochParams(eps, t1, math.ceil(N * M + N * M * r_upper / eps))


def run_udebo(env: MECEnvironment, capacities, horizon: int, sched: UDeboSchedule,
              rng: np.random.Generator, **kwargs) -> RunTrace:
    N, M = env.n_users, int(np.sum(capacities))
    trace = run_epochs(env, capacities, horizon,
                       lambda n, active: udebo_schedule(n, sched, N, M, env.reward_upper),
                       rng, algorithm="udebo", **kwargs)
    trace.meta.update(c0=sched.c0, c1=sched.c1, vartheta=sched.vartheta)
    return trace


# -- D-DEBO ------------------------------------------------------------------

ENTER, LEAVE = "enter", "leave"


@dataclass(frozen=True)
class PopulationEvent:
    epoch: int
    kind: str
    user: Union[UserProfile, int]

    @property
    def user_id(self) -> int:
        return self.user.id if isinstance(self.user, UserProfile) else int(self.user)


def max_entry_epoch(horizon: int, zeta: float) -> int:
    return math.ceil(zeta * math.log2(max(horizon, 2)))


def population_schedule(initial_ids: Sequence[int], events: Sequence[PopulationEvent],
                        M: int, horizon: int, zeta: float = 0.5):
    """Validate events and return ``ids_at(n)``, the user ids present in epoch n."""
    if not 0 < zeta < 1:
        raise ConfigError("must lie in (0, 1)", "zeta")
    seen = set(initial_ids)
    present = list(initial_ids)
    if len(seen) != len(present):
        raise ConfigError("duplicate user ids", "users")
    if len(present) > M:
        raise ConfigError(f"{len(present)} users exceed {M} resource units", "users")
    limit = max_entry_epoch(horizon, zeta)
    by_epoch: dict[int, list[PopulationEvent]] = {}
    for k, ev in enumerate(sorted(events, key=lambda e: e.epoch)):
        where = f"events[{k}]"
        if ev.epoch < 1:
            raise ConfigError("epoch must be >= 1", where)
        if ev.kind not in (ENTER, LEAVE):
            raise ConfigError(f"unknown event kind {ev.kind!r}", where)
        by_epoch.setdefault(ev.epoch, []).append(ev)
    history = {0: list(present)}
    for n in sorted(by_epoch):
        for ev in by_epoch[n]:
            uid = ev.user_id
            if ev.kind == ENTER:
                if not isinstance(ev.user, UserProfile):
                    raise ConfigError("enter events need a full user profile", f"epoch {n}")
                if uid in seen:
                    raise ConfigError(f"duplicate user id {uid}", f"epoch {n}")
                if n > limit:
                    raise ConfigError(f"last entry at epoch {n} exceeds ceil(zeta*log2 T) = {limit}",
                                      f"epoch {n}")
                seen.add(uid)
                present.append(uid)
            else:
                if uid not in present:
                    raise ConfigError(f"user {uid} is not present", f"epoch {n}")
                present.remove(uid)
        if len(present) > M:
            raise ConfigError(f"{len(present)} users exceed {M} resource units", f"epoch {n}")
        if not present:
            raise ConfigError("population becomes empty", f"epoch {n}")
        history[n] = list(present)
    starts = sorted(history)

    def ids_at(n: int) -> list:
        last = max(s for s in starts if s <= n)
        return history[last]

    return ids_at


def ddebo_environment(env: MECEnvironment, events: Sequence[PopulationEvent]) -> MECEnvironment:
    """Environment holding the initial users followed by every entering user."""
    extra = [e.user for e in events if e.kind == ENTER]
    if not extra:
        return env
    return MECEnvironment(list(env.users) + extra, env.servers, env.model.noise_half_width,
                          env.reward_lower, env.reward_upper, env.capacity_model)


def run_ddebo(env: MECEnvironment, capacities, horizon: int, events: Sequence[PopulationEvent],
              rng: np.random.Generator, *, zeta: float = 0.5, t1_cap: Optional[int] = None,
              delta_min_override: Optional[float] = None, **kwargs) -> RunTrace:
    """DEBO under a changing user population.

    ``env`` holds the initial users; entering users are appended in event
    order. Epoch parameters use the known gaps of the population present in
    that epoch, which servers broadcast as its size.
    """
    caps = np.asarray(capacities, dtype=np.int64)
    M = int(caps.sum())
    initial = [u.id for u in env.users]
    ids_at = population_schedule(initial, events, M, horizon, zeta)
    full = ddebo_environment(env, events)
    index = {u.id: k for k, u in enumerate(full.users)}
    cache: dict[tuple, EpochParams] = {}

    def population(n):
        return np.array(sorted(index[u] for u in ids_at(n)), dtype=np.int64)

    def schedule(n, active):
        key = tuple(active)
        if key not in cache:
            mu = full.mu[active]
            gaps = compute_gaps(mu, caps, delta_min_override)
            cache[key] = theorem1_params(gaps, len(active), M, int(caps.min()), len(caps),
                                         full.reward_upper, full.reward_lower, t1_cap)
        return cache[key]

    trace = run_epochs(full, caps, horizon, schedule, rng, algorithm="ddebo",
                       population=population, **kwargs)
    trace.meta.update(zeta=zeta, events=[(e.epoch, e.kind, e.user_id) for e in events])
    return trace


# -- F-DEBO ------------------------------------------------------------------

@dataclass(frozen=True)
class FairnessConfig:
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("must be > 0", "beta")


def fairness_transform(r, beta: float = 1.0) -> np.ndarray:
    """Elementwise ``ln(1 + beta * r)``."""
    return np.log1p(beta * np.asarray(r, dtype=float))


def fairness_error_bound(delta, beta: float, r_lower: float):
    """Worst-case transform error for an estimate within ``delta`` of the mean,
    valid while ``delta < (1 + beta r_lower) / (4 beta)``."""
    return 4 * beta * np.asarray(delta) / (3 * (1 + beta * r_lower))


def theorem4_params(delta_f: float, delta_user_f: float, N: int, M: int, M_min: int, K: int,
                    r_upper: float, r_lower: float, beta: float,
                    t1_cap: Optional[int] = None) -> EpochParams:
    eps = max(delta_f / (5 * N), delta_user_f / K - 3 * delta_f / (4 * N * K))
    spread2 = (r_upper - r_lower) ** 2
    scale = beta ** 2 / (1 + beta * r_lower) ** 2
    t1 = max(math.ceil(2048 * N ** 2 * M * spread2 * scale / (81 * delta_f ** 2 * M_min)),
             math.ceil(8 * M * spread2 * scale / M_min),
             math.ceil(81 * M ** 2 / (2 * M_min ** 2)))
    t2 = math.ceil(N * M + N * M * math.log1p(beta * r_upper) / eps)
    return EpochParams(eps, _cap(t1, t1_cap), t2)


def fair_params_for(env: MECEnvironment, capacities, beta: float, t1_cap=None,
                    delta_min_override=None) -> EpochParams:
    caps = np.asarray(capacities, dtype=np.int64)
    gaps = compute_gaps(fairness_transform(env.mu, beta), caps, delta_min_override)
    return theorem4_params(gaps.delta_min, gaps.delta_user_min, env.n_users, int(caps.sum()),
                           int(caps.min()), len(caps), env.reward_upper, env.reward_lower,
                           beta, t1_cap)


def run_fdebo(env: MECEnvironment, capacities, horizon: int, beta: float, rng: np.random.Generator,
              params: Optional[EpochParams] = None, t1_cap: Optional[int] = None, **kwargs) -> RunTrace:
    """DEBO whose auction maximizes the sum of ``ln(1 + beta * reward)``."""
    FairnessConfig(beta)
    if params is None:
        params = fair_params_for(env, capacities, beta, t1_cap)
    trace = run_epochs(env, capacities, horizon, lambda n, active: params, rng, algorithm="fdebo",
                       transform=lambda r: fairness_transform(r, beta), **kwargs)
    trace.meta.update(beta=beta, epsilon=params.epsilon, t1=params.t1, t2=params.t2)
    return trace
