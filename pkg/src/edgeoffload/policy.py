"""The per-slot control law: drops, transmit amounts and channel assignment.

Every function here is a pure function of a start-of-slot snapshot.  The
:class:`TODGPolicy` estimator bundles them: ``fit`` turns a system
configuration into certified parameters, ``decide`` produces one slot's
:class:`~edgeoffload.model.SlotDecision`.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import SENTINEL, ContractViolation
from .analysis import certify, utility_of
from .assignment import auction_solve, hungarian_solve
from .model import SlotDecision


# -- drop sub-problems ---------------------------------------------------------------


def solve_user_drop(a, Q, Z, epsilon, d_max, g, weight=None):
    """Maximise ``epsilon*g(a - d) + (Q + Z)*d`` over ``d`` in ``[0, d_max]``.

    Inputs broadcast elementwise; scalars in give a float out.  ``weight``
    overrides the utility weight of ``g`` (per device).

    Notes
    -----
    The objective is concave in ``d``.  With ``y = (Q + Z)/epsilon`` inside the
    range of ``g'`` the stationary point ``a - g'^-1(y)`` is clamped to the box;
    otherwise the objective is monotone and one of the endpoints wins, ties
    going to 0.
    """
    w = g.weight if weight is None else weight
    a, Q, Z, d_max, w = np.broadcast_arrays(*map(np.asarray, (a, Q, Z, d_max, w)))
    pressure = Q + Z
    if epsilon == 0:
        out = d_max.astype(float)
    else:
        # a tiny epsilon overflows y to inf, which falls outside range(g')
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            y = pressure / epsilon
        inv = g.inverse_derivative(y, w)
        interior = np.clip(a - inv, 0.0, d_max)
        keep = epsilon * g.value(a, w)
        drop_all = epsilon * g.value(a - d_max, w) + pressure * d_max
        endpoint = np.where(drop_all > keep, d_max, 0.0)
        out = np.where(np.isnan(inv), endpoint, interior).astype(float)
    return float(out) if out.ndim == 0 else out


def solve_server_drop(Q, Z, beta, epsilon, d_max):
    """Drop the full cap when ``Q + Z > beta*epsilon``, nothing otherwise."""
    out = np.where(np.asarray(Q) + np.asarray(Z) > beta * epsilon, d_max, 0.0).astype(float)
    return float(out) if out.ndim == 0 else out


def transmit_amount(assigned, xi, c):
    """Send as much as the channel and the device allow, or 0 when idle."""
    if assigned is None:
        return 0.0
    return float(min(xi, c))


# -- edge weights ------------------------------------------------------------------


def best_servers(pressure, Q_s_of_device, xi, c):
    """Best target server and its score for many (device, channel) pairs.

    Parameters
    ----------
    pressure : array, shape (P,)
        ``Q^u + Z^u`` of the pair's device.
    Q_s_of_device : array, shape (P, M)
        VM backlogs of the device's type on every server.
    xi : array, shape (P,)
    c : array, shape (P, M)
        Capacities of the pair's channel towards every server.

    Returns
    -------
    server : int array, shape (P,)
        Lowest-index maximiser.
    phi : array, shape (P,)
    """
    scores = (pressure[:, None] - Q_s_of_device) * np.minimum(xi[:, None], c)
    server = np.argmax(scores, axis=1)
    return server, scores[np.arange(len(server)), server]


def best_server(pressure, Q_s_k, xi, c_nl):
    """Scalar form of :func:`best_servers` for one device and one channel."""
    server, phi = best_servers(
        np.array([pressure], dtype=float),
        np.asarray(Q_s_k, dtype=float)[None, :],
        np.array([xi], dtype=float),
        np.asarray(c_nl, dtype=float)[None, :],
    )
    return int(server[0]), float(phi[0])


def all_best_servers(snapshot, xi, c, device_type):
    """Best servers ``[n, l]`` and scores ``phi[n, l]`` for the full grid."""
    pressure = snapshot.Q_u + snapshot.Z_u
    Qs = snapshot.Q_s.T[device_type]  # [n, m]
    scores = (pressure[:, None, None] - Qs[:, None, :]) * np.minimum(xi[:, None, None], c)
    server = np.argmax(scores, axis=2)
    phi = np.take_along_axis(scores, server[:, :, None], axis=2)[:, :, 0]
    return server, phi


def edge_weight(phi):
    """Matching weight of an edge: ``phi`` when positive, else the sentinel."""
    phi = np.asarray(phi, dtype=float)
    out = np.where(phi > 0, phi, SENTINEL)
    return float(out) if out.ndim == 0 else out


# -- periodic reuse ----------------------------------------------------------------


@dataclass
class AssignmentCache:
    """Channel ownership from the last solved matching.

    ``device_of_channel[l]`` is -1 for a free channel.
    """

    device_of_channel: np.ndarray
    last_solved_slot: int = -1

    @classmethod
    def empty(cls, num_channels):
        return cls(np.full(num_channels, -1, dtype=np.int64))

    @property
    def last_assignment(self):
        held = np.flatnonzero(self.device_of_channel >= 0)
        return {int(l): int(self.device_of_channel[l]) for l in held}


def periodic_offload_decision(t, delta, cache, fresh, best, num_devices):
    """Channel and server per device for slot ``t``.

    Parameters
    ----------
    fresh : Matching or None
        Required when ``t`` is a multiple of ``delta``.
    best : callable
        ``best(devices, channels) -> (server, phi)`` evaluated on the current
        slot's state, vectorised over pairs.

    Returns
    -------
    channel, server : int arrays, shape (num_devices,)
        -1 marks an idle device.
    """
    channel = np.full(num_devices, -1, dtype=np.int64)
    server = np.full(num_devices, -1, dtype=np.int64)
    if t % delta == 0:
        if fresh is None:
            raise ContractViolation(f"slot {t} starts a period but no fresh matching was given")
        cache.device_of_channel.fill(-1)
        cache.last_solved_slot = t
        if len(fresh) == 0:
            return channel, server
        devs = np.array([n for n, _ in fresh.pairs], dtype=np.int64)
        chans = np.array([l for _, l in fresh.pairs], dtype=np.int64)
        cache.device_of_channel[chans] = devs
        sv, _ = best(devs, chans)
        channel[devs] = chans
        server[devs] = sv
        return channel, server

    if cache.last_solved_slot != t - t % delta:
        raise ContractViolation(
            f"slot {t}: cached matching is from slot {cache.last_solved_slot}, "
            f"expected {t - t % delta}"
        )
    chans = np.flatnonzero(cache.device_of_channel >= 0)
    if chans.size == 0:
        return channel, server
    devs = cache.device_of_channel[chans]
    sv, phi = best(devs, chans)
    on = phi > 0  # idle this slot otherwise, but the channel stays held
    channel[devs[on]] = chans[on]
    server[devs[on]] = sv[on]
    return channel, server


# -- estimator ---------------------------------------------------------------------


class TODGPolicy(BaseEstimator):
    """Online offloading with delay guarantees.

    Parameters
    ----------
    epsilon : float, optional
        Utility weight.  Defaults to the configuration's value, or to the
        largest value the delay/buffer certificate admits.
    delta : int, optional
        Matching period in slots.
    zeta_margin : float, optional
        Relative margin of the server delay-penalty rate over its lower bound.
    solver : {"hungarian", "auction"}, optional
    hops : int, optional
        Diameter of the simulated solver mesh (auction only).

    Attributes
    ----------
    certificate_ : ParameterCertificate
    cache_ : AssignmentCache
    last_rounds_ : int
        Auction rounds spent in the last call to :meth:`decide`.
    """

    def __init__(self, epsilon=None, delta=None, zeta_margin=None, solver=None, hops=None):
        self.epsilon = epsilon
        self.delta = delta
        self.zeta_margin = zeta_margin
        self.solver = solver
        self.hops = hops

    def fit(self, config):
        delta = config.delta if self.delta is None else int(self.delta)
        if delta < 1:
            raise ValueError(f"delta must be >= 1, got {delta}")
        solver = config.solver if self.solver is None else self.solver
        if solver not in ("hungarian", "auction"):
            raise ValueError(f"unknown solver {solver!r}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        self.certificate_ = certify(config, epsilon=self.epsilon, margin=self.zeta_margin)
        self.config_ = config
        self.utility_ = utility_of(config)
        self.epsilon_ = self.certificate_.epsilon
        self.zeta_u_ = self.certificate_.zeta_u
        self.zeta_s_ = self.certificate_.zeta_s
        self.delta_ = delta
        self.solver_ = solver
        self.hops_ = config.solver_hops if self.hops is None else int(self.hops)
        self.cache_ = AssignmentCache.empty(config.num_channels)
        self.last_rounds_ = 0
        return self

    def _pair_best(self, snapshot, sample):
        types = self.config_.device_type
        pressure = snapshot.Q_u + snapshot.Z_u

        def best(devs, chans):
            return best_servers(
                pressure[devs],
                snapshot.Q_s.T[types[devs]],
                sample.xi[devs],
                sample.c[devs, chans, :],
            )

        return best

    def _match(self, snapshot, sample):
        _, phi = all_best_servers(snapshot, sample.xi, sample.c, self.config_.device_type)
        W = edge_weight(phi)
        if self.solver_ == "auction":
            return auction_solve(W, num_servers=self.config_.num_servers, hops=self.hops_)
        return hungarian_solve(W), 0

    def decide(self, snapshot, sample, t, rng=None):
        """Control action for slot ``t`` given start-of-slot state and draws."""
        check_is_fitted(self, "certificate_")
        cfg = self.config_
        fresh = None
        self.last_rounds_ = 0
        if t % self.delta_ == 0:
            fresh, self.last_rounds_ = self._match(snapshot, sample)
        channel, server = periodic_offload_decision(
            t, self.delta_, self.cache_, fresh, self._pair_best(snapshot, sample),
            cfg.num_devices,
        )
        return self._complete(channel, server, snapshot, sample)

    def optimal_offload(self, snapshot, sample):
        """Decision with a freshly solved matching, leaving the cache untouched."""
        check_is_fitted(self, "certificate_")
        matching, _ = self._match(snapshot, sample)
        cache = AssignmentCache.empty(self.config_.num_channels)
        channel, server = periodic_offload_decision(
            0, 1, cache, matching, self._pair_best(snapshot, sample), self.config_.num_devices
        )
        return self._complete(channel, server, snapshot, sample)

    def _complete(self, channel, server, snapshot, sample):
        cfg = self.config_
        s = np.zeros(cfg.num_devices)
        on = np.flatnonzero(channel >= 0)
        s[on] = np.minimum(sample.xi[on], sample.c[on, channel[on], server[on]])
        d_u = solve_user_drop(
            sample.a, snapshot.Q_u, snapshot.Z_u, self.epsilon_, cfg.d_u_max, self.utility_,
            cfg.utility_weight,
        )
        d_s = solve_server_drop(
            snapshot.Q_s, snapshot.Z_s, self.certificate_.beta, self.epsilon_, cfg.d_s_max
        )
        return SlotDecision(channel, server, s, np.atleast_1d(d_u), np.atleast_2d(d_s))


__all__ = [
    "AssignmentCache",
    "TODGPolicy",
    "all_best_servers",
    "best_server",
    "best_servers",
    "edge_weight",
    "periodic_offload_decision",
    "solve_server_drop",
    "solve_user_drop",
    "transmit_amount",
]
