"""Per-slot run records shared by every policy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EXPLORE, MATCH, EXPLOIT = 0, 1, 2
PHASE_NAMES = ("explore", "match", "exploit")


@dataclass
class EpochRecord:
    n: int
    start: int
    t1: int = 0
    epsilon: float = float("nan")
    t2: int = 0
    match_slots: int = 0
    exploit_slots: int = 0
    assignment: Optional[tuple] = None
    terminated: bool = True
    holes: int = 0
    extras: dict = field(default_factory=dict)


class RunTrace:
    """Slot-by-slot record of one simulation run.

    ``choices`` uses 1-based servers with 0 for idle; users absent from the
    system in a slot are recorded as idle with ``present`` False.
    """

    def __init__(self, algorithm: str, horizon: int, mu: np.ndarray, user_ids=None):
        N = mu.shape[0]
        self.algorithm = algorithm
        self.horizon = int(horizon)
        self.mu = np.asarray(mu, dtype=float)
        self.user_ids = list(user_ids) if user_ids is not None else list(range(1, N + 1))
        self.choices = np.zeros((horizon, N), dtype=np.int16)
        self.processed = np.zeros((horizon, N), dtype=bool)
        self.rewards = np.zeros((horizon, N), dtype=float)
        self.present = np.ones((horizon, N), dtype=bool)
        self.phase = np.full(horizon, EXPLOIT, dtype=np.int8)
        self.epoch = np.zeros(horizon, dtype=np.int32)
        self.epochs: list[EpochRecord] = []
        self.meta: dict = {}
        self.t = 0

    @property
    def n_users(self) -> int:
        return self.mu.shape[0]

    @property
    def remaining(self) -> int:
        return self.horizon - self.t

    @property
    def full(self) -> bool:
        return self.t >= self.horizon

    def append(self, choices, processed, rewards, phase: int, epoch: int, present=None) -> int:
        """Record a block of slots, truncated at the horizon; returns slots kept."""
        choices = np.atleast_2d(choices)
        n = min(choices.shape[0], self.remaining)
        if n <= 0:
            return 0
        s = slice(self.t, self.t + n)
        self.choices[s] = choices[:n]
        self.processed[s] = np.atleast_2d(processed)[:n]
        self.rewards[s] = np.atleast_2d(rewards)[:n]
        if present is not None:
            self.present[s] = present
        self.phase[s] = phase
        self.epoch[s] = epoch
        self.t += n
        return n

    def expected_rewards(self) -> np.ndarray:
        """Per-slot, per-user expected reward: mu of the chosen server if processed."""
        cols = np.maximum(self.choices.astype(np.int64) - 1, 0)
        rows = np.arange(self.n_users)[None, :]
        return np.where(self.processed, self.mu[rows, cols], 0.0)

    @property
    def final_assignment(self) -> Optional[np.ndarray]:
        for rec in reversed(self.epochs):
            if rec.assignment is not None:
                return np.array(rec.assignment, dtype=np.int64)
        return None

    @property
    def n_epochs(self) -> int:
        return len(self.epochs)
