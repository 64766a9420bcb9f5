import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mecbandit.env import (HETEROGENEOUS, RewardModel, ServerProfile, UserProfile, MECEnvironment,
                           compute_delay, expected_reward, sample_reward)
from mecbandit.errors import ConfigError


def user(i=1, b=8e6, gamma=1000.0, v=3.2, rho=0.3, c=None):
    return UserProfile(i, b, gamma, v, rho, c)


def server(j=1, s=1e7, f=8e9, M=2, C=None):
    return ServerProfile(j, s, f, M, C)


def test_delay_examples():
    assert compute_delay(user(b=8e6), server(s=1e7, f=8e9)) == pytest.approx(1.8)
    assert compute_delay(user(b=8e6, gamma=1), server(s=8e6, f=8e6)) == pytest.approx(2.0)
    assert compute_delay(user(b=4e6), server(s=9e6, f=4e9)) == pytest.approx(4 / 9 + 1.0)


def test_expected_reward_examples():
    assert expected_reward(user(b=8e6, v=3.2, rho=0.3), server(s=1e7, f=8e9)) == pytest.approx(2.66)
    assert expected_reward(user(rho=0.0, v=3.1), server()) == 3.1
    assert expected_reward(user(b=4e6, v=3.0, rho=0.5), server(s=9e6, f=4e9)) == pytest.approx(2.2778, abs=1e-4)


def test_nonpositive_reward_rejected():
    with pytest.raises(ConfigError, match="latency cost"):
        MECEnvironment([user(v=1.0, rho=1.0)], [server()])


def test_reward_bounds_validated():
    with pytest.raises(ConfigError):
        RewardModel(np.array([[3.7]]), 0.3, 0.3, 3.8)
    with pytest.raises(ConfigError):
        RewardModel(np.array([[0.5]]), 0.3, 0.3, 3.8)


def test_profile_validation():
    with pytest.raises(ConfigError):
        user(b=0)
    with pytest.raises(ConfigError):
        server(s=-1)
    with pytest.raises(ConfigError):
        MECEnvironment([user(1), user(1)], [server()])
    with pytest.raises(ConfigError):
        MECEnvironment([user()], [server(M=None)])
    with pytest.raises(ConfigError):
        MECEnvironment([user()], [server(C=None)], capacity_model=HETEROGENEOUS)


def test_sample_reward(rng):
    model = RewardModel(np.array([[2.66]]), 0.0)
    assert sample_reward(model, 0, 0, rng) == 2.66
    model = RewardModel(np.array([[2.66]]), 0.3)
    draws = np.array([sample_reward(model, 0, 0, rng) for _ in range(10_000)])
    assert draws.min() >= 2.36 and draws.max() <= 2.96
    env = MECEnvironment([user()], [server()])
    obs = env.observe(np.ones((100_000, 1), int), np.ones((100_000, 1), bool), rng)
    assert abs(obs.mean() - env.mu[0, 0]) < 0.01


def two_server_env(n_users, caps, hetero=False, demands=None):
    users = [user(i + 1, c=None if demands is None else demands[i]) for i in range(n_users)]
    servers = [ServerProfile(j + 1, 1e7, 8e9, c if not hetero else None, c if hetero else None)
               for j, c in enumerate(caps)]
    return MECEnvironment(users, servers, capacity_model=HETEROGENEOUS if hetero else "homogeneous")


def test_step_homogeneous_examples(rng):
    env = two_server_env(2, [2])
    out = env.step_homogeneous([1, 1], rng)
    assert all(o.processed for o in out)
    env = two_server_env(3, [2])
    out = env.step_homogeneous([1, 1, 1], rng)
    assert sum(o.processed for o in out) == 2
    assert [o.observed_reward for o in out if not o.processed] == [0.0]


def test_uniform_subset_frequency(rng):
    env = two_server_env(3, [2])
    processed = env.admit_homogeneous(np.ones((10_000, 3), int), rng)
    abandoned = 1 - processed.mean(axis=0)
    assert np.all(np.abs(abandoned - 1 / 3) < 0.02)


def test_step_heterogeneous_examples(rng):
    env = two_server_env(2, [2.0], hetero=True, demands=[0.5, 0.5])
    assert all(o.processed for o in env.step_heterogeneous([1, 1], rng))
    env = two_server_env(3, [2.0], hetero=True, demands=[1.0, 1.0, 1.0])
    assert sum(o.processed for o in env.step_heterogeneous([1, 1, 1], rng)) == 2
    env = two_server_env(1, [0.5], hetero=True, demands=[0.6])
    out = env.step_heterogeneous([1], rng)
    assert not out[0].processed and out[0].observed_reward == 0.0


def test_idle_yields_nothing(rng):
    env = two_server_env(2, [1, 1])
    out = env.step_homogeneous([0, 2], rng)
    assert out[0].server == 0 and not out[0].processed and out[0].observed_reward == 0.0


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8), st.lists(st.integers(1, 3), min_size=1, max_size=3))
def test_capacity_never_violated(seed, n_users, caps):
    rng = np.random.default_rng(seed)
    env = two_server_env(n_users, caps)
    choices = rng.integers(0, len(caps) + 1, size=(50, n_users))
    processed, rewards = env.play(choices, rng)
    assert env.capacity_violations(choices, processed) == 0
    assert np.all(rewards[~processed] == 0)
    # A server within capacity processes everything sent to it.
    for j, c in enumerate(caps, start=1):
        on_j = choices == j
        light = on_j.sum(axis=1) <= c
        assert np.all(processed[light] | ~on_j[light])


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_heterogeneous_capacity_never_violated(seed, n_users):
    rng = np.random.default_rng(seed)
    demands = rng.uniform(0.5, 1.0, n_users)
    env = two_server_env(n_users, [2.0, 3.0], hetero=True, demands=demands)
    choices = rng.integers(0, 3, size=(50, n_users))
    processed, rewards = env.play(choices, rng)
    assert env.capacity_violations(choices, processed) == 0
    assert np.all(rewards[~processed] == 0)


def test_determinism():
    env = two_server_env(5, [2, 2])
    choices = np.random.default_rng(0).integers(1, 3, size=(200, 5))
    a = env.play(choices, np.random.default_rng(7))
    b = env.play(choices, np.random.default_rng(7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_processed_means_converge(rng):
    env = two_server_env(1, [1, 1])
    choices = np.ones((100_000, 1), int)
    processed, rewards = env.play(choices, rng)
    h = env.model.noise_half_width
    assert abs(rewards[processed].mean() - env.mu[0, 0]) < 3 * h / np.sqrt(1e5) * 5
