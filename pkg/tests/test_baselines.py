from types import SimpleNamespace

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from edgeoffload.baselines import GreedyPolicy, RandomPolicy, greedy_decide, random_decide
from edgeoffload.config import SystemConfig
from edgeoffload.engine import EnvironmentSample, EnvironmentSampler
from edgeoffload.model import QueueSnapshot


def stub(N, L, M=1):
    return SimpleNamespace(
        num_devices=N, num_channels=L, num_servers=M, num_types=1,
        device_type=np.zeros(N, dtype=int), Q_u_max=np.full(N, 100.0),
        Q_s_max=np.full((M, 1), 50.0), d_u_max=np.full(N, 5.0), d_s_max=np.full((M, 1), 20.0),
    )


def env(N, L, M=1):
    return EnvironmentSample(np.zeros(N), np.ones((N, L, M)), np.ones(N), np.ones((M, 1)))


def snap(Q_u, M=1):
    N = len(Q_u)
    return QueueSnapshot(np.asarray(Q_u, float), np.zeros(N), np.zeros((M, 1)), np.zeros((M, 1)))


def test_greedy_examples(frozen):
    rng = np.random.default_rng(0)
    d = greedy_decide(snap([3, 1]), env(2, 5), rng, stub(2, 5))
    assert (d.channel >= 0).all()
    assert len(set(d.channel)) == 2
    d = greedy_decide(snap([9, 1, 4, 4, 7]), env(5, 2), rng, stub(5, 2))
    assert list(np.flatnonzero(d.channel >= 0)) == frozen["greedy_selection_example"]
    d = greedy_decide(snap([1, 2]), env(2, 0), rng, stub(2, 0))
    assert (d.channel == -1).all() and (d.s == 0).all()


def test_greedy_targets_least_loaded_server():
    Q = QueueSnapshot(np.ones(1), np.zeros(1), np.array([[5.0], [2.0], [9.0]]), np.zeros((3, 1)))
    d = greedy_decide(Q, env(1, 1, 3), np.random.default_rng(0), stub(1, 1, 3))
    assert d.server[0] == 1


def test_random_examples():
    d = random_decide(snap([1, 2]), env(2, 0), np.random.default_rng(0), stub(2, 0))
    assert (d.channel == -1).all()
    for seed in range(5):
        d = random_decide(snap([0.0]), env(1, 1), np.random.default_rng(seed), stub(1, 1))
        assert d.channel[0] == 0
    a = random_decide(snap(np.arange(6), 2), env(6, 3, 2), np.random.default_rng(4), stub(6, 3, 2))
    b = random_decide(snap(np.arange(6), 2), env(6, 3, 2), np.random.default_rng(4), stub(6, 3, 2))
    assert (a.channel == b.channel).all() and (a.server == b.server).all()


def test_overflow_drops_keep_buffers_within_caps():
    cfg = stub(1, 1)
    Q = snap([99.5])
    sample = EnvironmentSample(np.array([1.0]), np.zeros((1, 1, 1)), np.ones(1), np.ones((1, 1)))
    d = greedy_decide(Q, sample, np.random.default_rng(0), cfg)
    assert d.s[0] == 0
    assert d.d_u[0] == 0.5


@given(st.integers(0, 1000), st.sampled_from([GreedyPolicy, RandomPolicy]))
def test_decisions_feasible(seed, cls):
    cfg = SystemConfig(devices_per_type=(3, 2, 2), num_servers=2, num_channels=4)
    rng = np.random.default_rng(seed)
    N, M, K = cfg.num_devices, cfg.num_servers, cfg.num_types
    Q = QueueSnapshot(rng.uniform(0, 100, N), np.zeros(N), rng.uniform(0, 50, (M, K)),
                      np.zeros((M, K)))
    sample = EnvironmentSampler(cfg, seed).sample(0)
    pol = cls().fit(cfg)
    d = pol.decide(Q, sample, 0, rng)
    d.check_feasible(sample.xi, sample.c, cfg.d_u_max, cfg.d_s_max)
    assert (d.channel >= 0).sum() == min(N, cfg.num_channels)
