"""Comparison policies: greedy shortest-queue allocation and a random floor.

Neither baseline drops tasks deliberately.  Buffers are protected by dropping
exactly the amount that would otherwise overflow them.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .analysis import InfeasibleParameters, select_zetas
from .model import SlotDecision


def _overflow_drops(snapshot, sample, channel, server, s, config):
    """Smallest drops keeping every buffer within its cap after this slot."""
    sent = np.minimum(s, snapshot.Q_u)
    d_u = np.maximum(0.0, snapshot.Q_u - sent + sample.a - config.Q_u_max)
    arriving = np.zeros_like(snapshot.Q_s)
    on = np.flatnonzero(channel >= 0)
    np.add.at(arriving, (server[on], config.device_type[on]), sent[on])
    left = np.maximum(snapshot.Q_s - sample.u, 0.0)
    d_s = np.maximum(0.0, left + arriving - config.Q_s_max)
    return np.minimum(d_u, config.d_u_max), np.minimum(d_s, config.d_s_max)


def _transmit(channel, server, sample):
    s = np.zeros(len(channel))
    on = np.flatnonzero(channel >= 0)
    s[on] = np.minimum(sample.xi[on], sample.c[on, channel[on], server[on]])
    return s


def greedy_decide(snapshot, sample, rng, config):
    """Serve the ``min{N, L}`` shortest user queues on random channels.

    Devices are ranked by start-of-slot backlog (ties to the lowest index) and
    each chosen device targets the least-loaded VM of its type.
    """
    N, L = config.num_devices, config.num_channels
    channel = np.full(N, -1, dtype=np.int64)
    server = np.full(N, -1, dtype=np.int64)
    picks = min(N, L)
    if picks > 0:
        chosen = np.argsort(snapshot.Q_u, kind="stable")[:picks]
        channel[chosen] = rng.permutation(L)[:picks]
        server[chosen] = np.argmin(snapshot.Q_s.T[config.device_type[chosen]], axis=1)
    s = _transmit(channel, server, sample)
    d_u, d_s = _overflow_drops(snapshot, sample, channel, server, s, config)
    return SlotDecision(channel, server, s, d_u, d_s)


def random_decide(snapshot, sample, rng, config):
    """Uniformly random matching of size ``min{N, L}`` and random servers."""
    N, L, M = config.num_devices, config.num_channels, config.num_servers
    channel = np.full(N, -1, dtype=np.int64)
    server = np.full(N, -1, dtype=np.int64)
    picks = min(N, L)
    if picks > 0:
        chosen = rng.permutation(N)[:picks]
        channel[chosen] = rng.permutation(L)[:picks]
        server[chosen] = rng.integers(0, M, size=picks)
    s = _transmit(channel, server, sample)
    d_u, d_s = _overflow_drops(snapshot, sample, channel, server, s, config)
    return SlotDecision(channel, server, s, d_u, d_s)


class _BaselinePolicy(BaseEstimator):
    _rule = None

    def fit(self, config):
        self.config_ = config
        # delay state queues are tracked for reporting only
        try:
            self.zeta_u_, self.zeta_s_ = select_zetas(config)
        except InfeasibleParameters:
            self.zeta_u_ = np.zeros(config.num_devices)
            self.zeta_s_ = np.zeros((config.num_servers, config.num_types))
        self.last_rounds_ = 0
        return self

    def decide(self, snapshot, sample, t, rng):
        check_is_fitted(self, "config_")
        return type(self)._rule(snapshot, sample, rng, self.config_)


class GreedyPolicy(_BaselinePolicy):
    """Shortest-queue device selection with random channels."""

    _rule = staticmethod(greedy_decide)


class RandomPolicy(_BaselinePolicy):
    """Uniformly random feasible allocation."""

    _rule = staticmethod(random_decide)
