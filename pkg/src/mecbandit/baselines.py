"""Independent-learner baselines: per-user UCB1, per-user EXP3 and a
simplified non-zero-reward decentralized bandit.

Each policy runs in a compiled kernel. All randomness is drawn up front from
the run's generator in a fixed order (admission keys, reward noise, policy
draws), and the kernels call the same per-slot admission rules as the
environment, so policies differ only in how users choose servers.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ._kernels import admit_heterogeneous_slot, admit_homogeneous_slot
from .env import HOMOGENEOUS, MECEnvironment
from .trace import EXPLOIT, EXPLORE, RunTrace

DMNON0_LABEL = "DM-Non0 (simplified)"


@njit(cache=True)
def _admit(hetero, choices, keys, demands, caps_i, caps_f, out):
    if hetero:
        admit_heterogeneous_slot(choices, keys, demands, caps_f, out)
    else:
        admit_homogeneous_slot(choices, keys, caps_i, out)


@njit(cache=True)
def _observe(mu, choices, processed, noise, rewards):
    for i in range(choices.shape[0]):
        if processed[i]:
            rewards[i] = mu[i, choices[i] - 1] + noise[i]
        else:
            rewards[i] = 0.0


@njit(cache=True)
def _ucb_kernel(mu, hetero, demands, caps_i, caps_f, keys, noise, choices, processed, rewards):
    T, N = choices.shape
    K = mu.shape[1]
    counts = np.zeros((N, K))
    sums = np.zeros((N, K))
    for t in range(T):
        for i in range(N):
            if t < K:
                choices[t, i] = t + 1
            else:
                best, arg = -np.inf, 0
                for j in range(K):
                    v = sums[i, j] / counts[i, j] + np.sqrt(2.0 * np.log(t + 1.0) / counts[i, j])
                    if v > best:
                        best, arg = v, j
                choices[t, i] = arg + 1
        _admit(hetero, choices[t], keys[t], demands, caps_i, caps_f, processed[t])
        _observe(mu, choices[t], processed[t], noise[t], rewards[t])
        for i in range(N):
            j = choices[t, i] - 1
            counts[i, j] += 1.0
            sums[i, j] += rewards[t, i]


@njit(cache=True)
def _exp3_kernel(mu, hetero, demands, caps_i, caps_f, keys, noise, draws, gamma, r_upper,
                 choices, processed, rewards, probs_min):
    T, N = choices.shape
    K = mu.shape[1]
    logw = np.zeros((N, K))
    p = np.zeros(K)
    probs_min[0] = 1.0
    for t in range(T):
        for i in range(N):
            m = logw[i].max()
            total = 0.0
            for j in range(K):
                p[j] = np.exp(logw[i, j] - m)
                total += p[j]
            acc = 0.0
            pick = K - 1
            for j in range(K):
                p[j] = (1.0 - gamma) * p[j] / total + gamma / K
                if p[j] < probs_min[0]:
                    probs_min[0] = p[j]
            for j in range(K):
                acc += p[j]
                if draws[t, i] < acc:
                    pick = j
                    break
            choices[t, i] = pick + 1
            # Stash the chosen probability in the reward slot until observed.
            rewards[t, i] = p[pick]
        chosen_p = rewards[t].copy()
        _admit(hetero, choices[t], keys[t], demands, caps_i, caps_f, processed[t])
        _observe(mu, choices[t], processed[t], noise[t], rewards[t])
        for i in range(N):
            j = choices[t, i] - 1
            x = min(max(rewards[t, i] / r_upper, 0.0), 1.0)
            logw[i, j] += gamma * (x / chosen_p[i]) / K


@njit(cache=True)
def _dmnon0_kernel(mu, hetero, demands, caps_i, caps_f, keys, noise, draws, explore_len,
                   choices, processed, rewards, phase, epoch):
    T, N = choices.shape
    K = mu.shape[1]
    pulls = np.zeros((N, K))
    accepted = np.zeros((N, K))
    sums = np.zeros((N, K))
    commit = np.zeros(N, np.int64)
    t = 0
    n = 0
    while t < T:
        n += 1
        stop = min(t + explore_len, T)
        while t < stop:
            for i in range(N):
                choices[t, i] = min(int(draws[t, i] * K), K - 1) + 1
            phase[t] = 0
            epoch[t] = n
            _admit(hetero, choices[t], keys[t], demands, caps_i, caps_f, processed[t])
            _observe(mu, choices[t], processed[t], noise[t], rewards[t])
            for i in range(N):
                j = choices[t, i] - 1
                pulls[i, j] += 1.0
                if processed[t, i]:
                    accepted[i, j] += 1.0
                    sums[i, j] += rewards[t, i]
            t += 1
        # Commit to the best acceptance-discounted estimate.
        for i in range(N):
            best, arg = -np.inf, 0
            for j in range(K):
                if pulls[i, j] == 0:
                    v = np.inf
                elif accepted[i, j] == 0:
                    v = 0.0
                else:
                    v = (sums[i, j] / accepted[i, j]) * (accepted[i, j] / pulls[i, j])
                if v > best:
                    best, arg = v, j
            commit[i] = arg + 1
        stop = min(t + (1 << min(n, 62)), T)
        while t < stop:
            for i in range(N):
                choices[t, i] = commit[i]
            phase[t] = 2
            epoch[t] = n
            _admit(hetero, choices[t], keys[t], demands, caps_i, caps_f, processed[t])
            _observe(mu, choices[t], processed[t], noise[t], rewards[t])
            for i in range(N):
                j = choices[t, i] - 1
                pulls[i, j] += 1.0
                if processed[t, i]:
                    accepted[i, j] += 1.0
                    sums[i, j] += rewards[t, i]
            t += 1
    return n


def _setup(env: MECEnvironment, capacities, horizon: int, rng: np.random.Generator, name: str):
    N = env.n_users
    hetero = env.capacity_model != HOMOGENEOUS
    caps_i = np.asarray(capacities if not hetero else env.task_capacities, dtype=np.int64)
    caps_f = np.asarray(capacities if hetero else env.resource_capacities, dtype=float)
    h = env.model.noise_half_width
    keys = rng.random((horizon, N))
    noise = rng.uniform(-h, h, size=(horizon, N))
    trace = RunTrace(name, horizon, env.mu, [u.id for u in env.users])
    trace.phase[:] = EXPLOIT
    args = (np.ascontiguousarray(env.mu), hetero, env.demands, caps_i, caps_f, keys, noise)
    return trace, args


def _finish(trace: RunTrace, choices):
    trace.choices[:] = choices
    trace.t = trace.horizon
    return trace


def run_mucb(env: MECEnvironment, capacities, horizon: int, rng: np.random.Generator) -> RunTrace:
    """Every user runs UCB1 over the servers independently."""
    trace, args = _setup(env, capacities, horizon, rng, "mucb")
    choices = np.zeros((horizon, env.n_users), dtype=np.int64)
    _ucb_kernel(*args, choices, trace.processed, trace.rewards)
    trace.meta.update(exploration_constant="sqrt(2)")
    return _finish(trace, choices)


def run_mexp3(env: MECEnvironment, capacities, horizon: int, gamma_exp: float,
              rng: np.random.Generator) -> RunTrace:
    """Every user runs EXP3 with mixing ``gamma_exp`` and rewards scaled by the upper bound."""
    if not 0 < gamma_exp <= 1:
        raise ValueError("gamma_exp must lie in (0, 1]")
    trace, args = _setup(env, capacities, horizon, rng, "mexp3")
    draws = rng.random((horizon, env.n_users))
    choices = np.zeros((horizon, env.n_users), dtype=np.int64)
    pmin = np.ones(1)
    _exp3_kernel(*args, draws, float(gamma_exp), float(env.reward_upper),
                 choices, trace.processed, trace.rewards, pmin)
    trace.meta.update(gamma_exp=gamma_exp, min_probability=float(pmin[0]))
    return _finish(trace, choices)


def run_dmnon0(env: MECEnvironment, capacities, horizon: int, rng: np.random.Generator,
               explore_len: int | None = None) -> RunTrace:
    """Simplified non-zero-reward decentralized bandit.

    Epoch ``n`` starts with ``explore_len`` slots of uniformly random server
    choice, then commits for ``2**n`` slots to the server maximizing the
    estimated reward times the observed acceptance rate. Acceptance counts
    include committed slots, so crowding on a server lowers its score in
    later epochs.
    """
    K = env.n_servers
    explore_len = 10 * K if explore_len is None else int(explore_len)
    trace, args = _setup(env, capacities, horizon, rng, "dmnon0")
    draws = rng.random((horizon, env.n_users))
    choices = np.zeros((horizon, env.n_users), dtype=np.int64)
    phase = np.zeros(horizon, dtype=np.int8)
    epoch = np.zeros(horizon, dtype=np.int32)
    n = _dmnon0_kernel(*args, draws, explore_len, choices, trace.processed, trace.rewards, phase, epoch)
    trace.phase[:] = np.where(phase == 0, EXPLORE, EXPLOIT)
    trace.epoch[:] = epoch
    trace.meta.update(variant=DMNON0_LABEL, explore_len=explore_len, n_epochs=int(n))
    return _finish(trace, choices)
