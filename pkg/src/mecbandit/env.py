"""Mobile edge computing environment: delays, rewards and task admission."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError

HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous"

KB_BITS = 8000.0
MBPS = 1e6
GHZ = 1e9


@dataclass(frozen=True)
class UserProfile:
    id: int
    task_size_bits: float
    cycles_per_bit: float
    task_value: float
    latency_sensitivity: float
    resource_demand: Optional[float] = None

    def __post_init__(self):
        if self.task_size_bits <= 0:
            raise ConfigError("must be > 0", f"user {self.id}.task_size_bits")
        if self.cycles_per_bit <= 0:
            raise ConfigError("must be > 0", f"user {self.id}.cycles_per_bit")
        if self.task_value <= 0:
            raise ConfigError("must be > 0", f"user {self.id}.task_value")
        if self.latency_sensitivity < 0:
            raise ConfigError("must be >= 0", f"user {self.id}.latency_sensitivity")
        if self.resource_demand is not None and self.resource_demand <= 0:
            raise ConfigError("must be > 0", f"user {self.id}.resource_demand")


@dataclass(frozen=True)
class ServerProfile:
    id: int
    tx_rate_bits_per_s: float
    cpu_speed_cycles_per_s: float
    task_capacity: Optional[int] = None
    resource_capacity: Optional[float] = None

    def __post_init__(self):
        if self.tx_rate_bits_per_s <= 0:
            raise ConfigError("must be > 0", f"server {self.id}.tx_rate_bits_per_s")
        if self.cpu_speed_cycles_per_s <= 0:
            raise ConfigError("must be > 0", f"server {self.id}.cpu_speed_cycles_per_s")
        if self.resource_capacity is not None and self.resource_capacity <= 0:
            raise ConfigError("must be > 0", f"server {self.id}.resource_capacity")


@dataclass
class RewardModel:
    """Expected rewards plus the bounded uniform observation noise."""

    expected_reward: np.ndarray
    noise_half_width: float = 0.3
    reward_lower: float = 0.3
    reward_upper: float = 3.8

    def __post_init__(self):
        mu = np.asarray(self.expected_reward, dtype=float)
        self.expected_reward = mu
        h = self.noise_half_width
        if h < 0:
            raise ConfigError("must be >= 0", "noise_half_width")
        if np.any(mu <= 0):
            i, j = np.argwhere(mu <= 0)[0]
            raise ConfigError(
                f"expected reward of user {i + 1} on server {j + 1} is {mu[i, j]:.4g} <= 0; "
                "task value must exceed the latency cost",
                "expected_reward",
            )
        if mu.min() - h < self.reward_lower - 1e-12:
            raise ConfigError(
                f"min(mu) - h = {mu.min() - h:.4g} falls below the lower reward bound",
                "reward_lower",
            )
        if mu.max() + h > self.reward_upper + 1e-12:
            raise ConfigError(
                f"max(mu) + h = {mu.max() + h:.4g} exceeds the upper reward bound",
                "reward_upper",
            )


@dataclass
class SlotOutcome:
    user: int
    server: int  # 0 = idle
    processed: bool
    observed_reward: float


def compute_delay(user: UserProfile, server: ServerProfile) -> float:
    """Transmission plus processing time, in seconds."""
    b = user.task_size_bits
    return b / server.tx_rate_bits_per_s + b * user.cycles_per_bit / server.cpu_speed_cycles_per_s


def expected_reward(user: UserProfile, server: ServerProfile) -> float:
    """Task value minus the linear latency cost ``rho * delay``."""
    return user.task_value - user.latency_sensitivity * compute_delay(user, server)


def reward_matrix(users: Sequence[UserProfile], servers: Sequence[ServerProfile]) -> np.ndarray:
    return np.array([[expected_reward(u, s) for s in servers] for u in users], dtype=float)


def sample_reward(model: RewardModel, i: int, j: int, rng: np.random.Generator) -> float:
    """One noisy observation for matrix position (i, j) (0-based)."""
    h = model.noise_half_width
    return float(model.expected_reward[i, j] + rng.uniform(-h, h))


class MECEnvironment:
    """Static MEC system with hidden parameters and stochastic rewards.

    All slot-level methods accept a block of slots: ``choices`` has shape
    ``(n_slots, N)`` with 1-based server indices and 0 for idle. Randomness is
    drawn in a fixed order (admission keys, then noise) so that identical
    seeds reproduce identical outcomes.
    """

    def __init__(
        self,
        users: Sequence[UserProfile],
        servers: Sequence[ServerProfile],
        noise_half_width: float = 0.3,
        reward_lower: float = 0.3,
        reward_upper: float = 3.8,
        capacity_model: str = HOMOGENEOUS,
    ):
        if capacity_model not in (HOMOGENEOUS, HETEROGENEOUS):
            raise ConfigError(f"unknown capacity model {capacity_model!r}", "capacity_model")
        self.users = list(users)
        self.servers = list(servers)
        self.capacity_model = capacity_model
        if not self.users:
            raise ConfigError("at least one user required", "users")
        if not self.servers:
            raise ConfigError("at least one server required", "servers")
        ids = [u.id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate user ids", "users")
        if len({s.id for s in self.servers}) != len(self.servers):
            raise ConfigError("duplicate server ids", "servers")

        if capacity_model == HOMOGENEOUS:
            for s in self.servers:
                if s.task_capacity is None or s.task_capacity < 0:
                    raise ConfigError("integer task capacity required", f"server {s.id}.task_capacity")
        else:
            for s in self.servers:
                if s.resource_capacity is None:
                    raise ConfigError("resource capacity required", f"server {s.id}.resource_capacity")
            for u in self.users:
                if u.resource_demand is None:
                    raise ConfigError("resource demand required", f"user {u.id}.resource_demand")

        self.model = RewardModel(reward_matrix(self.users, self.servers), noise_half_width,
                                 reward_lower, reward_upper)

    @classmethod
    def from_expected_rewards(cls, mu, task_capacities=None, resource_capacities=None, demands=None,
                              noise_half_width: float = 0.3, reward_lower: float = 0.3,
                              reward_upper: float = 3.8) -> "MECEnvironment":
        """Environment with a prescribed reward matrix.

        Profiles are unit placeholders; only ``mu`` and the capacities drive
        the dynamics. Handy for synthetic and hand-built instances.
        """
        mu = np.asarray(mu, dtype=float)
        N, K = mu.shape
        hetero = resource_capacities is not None
        users = [UserProfile(i + 1, 1.0, 1.0, 1.0, 0.0, None if demands is None else float(demands[i]))
                 for i in range(N)]
        servers = [ServerProfile(j + 1, 1.0, 1.0,
                                 None if task_capacities is None else int(task_capacities[j]),
                                 None if resource_capacities is None else float(resource_capacities[j]))
                   for j in range(K)]
        env = cls(users, servers, noise_half_width=0.0, reward_lower=0.0, reward_upper=np.inf,
                  capacity_model=HETEROGENEOUS if hetero else HOMOGENEOUS)
        env.model = RewardModel(mu, noise_half_width, reward_lower, reward_upper)
        return env

    @property
    def mu(self) -> np.ndarray:
        return self.model.expected_reward

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def task_capacities(self) -> np.ndarray:
        return np.array([s.task_capacity or 0 for s in self.servers], dtype=np.int64)

    @property
    def resource_capacities(self) -> np.ndarray:
        return np.array([s.resource_capacity or 0.0 for s in self.servers], dtype=float)

    @property
    def demands(self) -> np.ndarray:
        return np.array([u.resource_demand or 0.0 for u in self.users], dtype=float)

    @property
    def reward_lower(self) -> float:
        return self.model.reward_lower

    @property
    def reward_upper(self) -> float:
        return self.model.reward_upper

    # -- admission -----------------------------------------------------------

    def _keys(self, shape, rng):
        return rng.random(shape)

    def admit_homogeneous(self, choices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        choices = np.atleast_2d(np.asarray(choices, dtype=np.int64))
        keys = self._keys(choices.shape, rng)
        return _kernels.admit_homogeneous(choices, keys, self.task_capacities)

    def admit_heterogeneous(self, choices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        choices = np.atleast_2d(np.asarray(choices, dtype=np.int64))
        keys = self._keys(choices.shape, rng)
        return _kernels.admit_heterogeneous(choices, keys, self.demands, self.resource_capacities)

    def admit_units(self, units: np.ndarray, unit_server: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        units = np.atleast_2d(np.asarray(units, dtype=np.int64))
        keys = self._keys(units.shape, rng)
        return _kernels.admit_units(units, np.asarray(unit_server, dtype=np.int64), keys,
                                    self.task_capacities)

    def observe(self, choices: np.ndarray, processed: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Noisy rewards for processed tasks; zero for idle or abandoned ones."""
        choices = np.atleast_2d(np.asarray(choices, dtype=np.int64))
        h = self.model.noise_half_width
        noise = rng.uniform(-h, h, size=choices.shape)
        cols = np.maximum(choices - 1, 0)
        rows = np.arange(choices.shape[1])[None, :]
        return np.where(processed, self.mu[rows, cols] + noise, 0.0)

    def play(self, choices: np.ndarray, rng: np.random.Generator):
        """Admit under the configured capacity model, then observe rewards."""
        if self.capacity_model == HOMOGENEOUS:
            processed = self.admit_homogeneous(choices, rng)
        else:
            processed = self.admit_heterogeneous(choices, rng)
        return processed, self.observe(choices, processed, rng)

    def _outcomes(self, choices, processed, rewards):
        return [
            SlotOutcome(user=u.id, server=int(c), processed=bool(p), observed_reward=float(r))
            for u, c, p, r in zip(self.users, choices, processed, rewards)
        ]

    def step_homogeneous(self, choices, rng: np.random.Generator) -> list[SlotOutcome]:
        choices = np.asarray(choices, dtype=np.int64).reshape(1, -1)
        processed = self.admit_homogeneous(choices, rng)
        rewards = self.observe(choices, processed, rng)
        return self._outcomes(choices[0], processed[0], rewards[0])

    def step_heterogeneous(self, choices, rng: np.random.Generator) -> list[SlotOutcome]:
        choices = np.asarray(choices, dtype=np.int64).reshape(1, -1)
        processed = self.admit_heterogeneous(choices, rng)
        rewards = self.observe(choices, processed, rng)
        return self._outcomes(choices[0], processed[0], rewards[0])

    def expected_slot_reward(self, choices: np.ndarray, processed: np.ndarray) -> np.ndarray:
        """Per-user expected reward for each slot: mu if processed, else 0."""
        choices = np.atleast_2d(np.asarray(choices, dtype=np.int64))
        cols = np.maximum(choices - 1, 0)
        rows = np.arange(choices.shape[1])[None, :]
        return np.where(processed, self.mu[rows, cols], 0.0)

    def capacity_violations(self, choices: np.ndarray, processed: np.ndarray) -> int:
        """Number of (slot, server) pairs whose processed load exceeds capacity."""
        choices = np.atleast_2d(np.asarray(choices, dtype=np.int64))
        bad = 0
        for j in range(1, self.n_servers + 1):
            on_j = processed & (choices == j)
            if self.capacity_model == HOMOGENEOUS:
                bad += int(np.sum(on_j.sum(axis=1) > self.task_capacities[j - 1]))
            else:
                load = on_j @ self.demands
                bad += int(np.sum(load > self.resource_capacities[j - 1] + _kernels.CAPACITY_TOL))
        return bad

    def subset(self, user_ids: Sequence[int]) -> "MECEnvironment":
        """Environment restricted to the given users (used for oracle instances)."""
        wanted = set(user_ids)
        rows = [k for k, u in enumerate(self.users) if u.id in wanted]
        env = MECEnvironment([self.users[k] for k in rows], self.servers, 0.0, 0.0, np.inf,
                             self.capacity_model)
        m = self.model
        env.model = RewardModel(self.mu[rows], m.noise_half_width, m.reward_lower, m.reward_upper)
        return env
