"""Slotted simulation: environment draws, policy calls, state transitions.

Each slot follows the control loop order: observe start-of-slot backlogs and
this slot's draws, let the policy decide (channel matching, transmit amounts,
drops), check the decision's feasibility, then advance every user buffer and
afterwards every VM buffer.  Every piece of task volume that leaves the
system is logged with its owner and delays.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from ._validation import ContractViolation
from .analysis import dual_objective, utility_of
from .baselines import GreedyPolicy, RandomPolicy
from .model import (
    SERVER_COMPLETE,
    SERVER_DROP,
    USER_DROP,
    DelayStateQueue,
    QueueSnapshot,
    TimedFifoQueue,
    apply_server_slot,
    apply_user_slot,
)
from .policy import TODGPolicy

POLICIES = {"todg": TODGPolicy, "ga": GreedyPolicy, "random": RandomPolicy}

# substream keys: one independent stream per (variable, entity)
_ARRIVAL, _XI, _CHANNEL, _SERVICE, _POLICY = range(5)
SAMPLE_BLOCK = 256
FEASIBILITY_ATOL = 1e-12
GAP_FULL_AUDIT_LIMIT = 2000
GAP_STRIDE = 10

DELAY_DTYPE = np.dtype(
    [
        ("owner", np.int64),
        ("server", np.int64),
        ("kind", "U15"),
        ("amount", float),
        ("arrival_slot", np.int64),
        ("exit_slot", np.int64),
        ("tau_u", np.int64),
        ("tau_s", np.int64),
    ]
)
GAP_DTYPE = np.dtype([("t", np.int64), ("q", np.int64), ("gap", float)])


@dataclass(frozen=True)
class EnvironmentSample:
    """One slot of random inputs: ``a[n]``, ``c[n, l, m]``, ``xi[n]``, ``u[m, k]``."""

    a: np.ndarray
    c: np.ndarray
    xi: np.ndarray
    u: np.ndarray


def _stream(seed, var, *entity):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(var, *entity)))


class EnvironmentSampler:
    """I.i.d. uniform draws with one substream per entity and variable.

    Changing the number of devices leaves the draws of the remaining devices
    untouched.  Draws are generated in blocks; a block of ``B`` slots consumes
    each stream exactly as ``B`` single-slot draws would.
    """

    def __init__(self, config, seed, block=SAMPLE_BLOCK):
        self.config = config
        self.seed = seed
        self.block = block
        N, M, K = config.num_devices, config.num_servers, config.num_types
        self._a = [_stream(seed, _ARRIVAL, n) for n in range(N)]
        self._xi = [_stream(seed, _XI, n) for n in range(N)]
        self._c = [_stream(seed, _CHANNEL, n) for n in range(N)]
        self._u = [[_stream(seed, _SERVICE, m, k) for k in range(K)] for m in range(M)]
        types = config.device_type
        self._a_band = [config.arrival_bands[types[n]] for n in range(N)]
        self._u_band = [config.service_bands[k] for k in range(K)]
        self._start = None
        self._buf = None

    def _refill(self, start):
        cfg, B = self.config, self.block
        N, L, M, K = cfg.num_devices, cfg.num_channels, cfg.num_servers, cfg.num_types
        a = np.empty((B, N))
        xi = np.empty((B, N))
        c = np.empty((B, N, L, M))
        u = np.empty((B, M, K))
        lo_c, hi_c = cfg.channel_band
        lo_x, hi_x = cfg.xi_band
        for n in range(N):
            a[:, n] = self._a[n].uniform(*self._a_band[n], size=B)
            xi[:, n] = self._xi[n].uniform(lo_x, hi_x, size=B)
            c[:, n] = self._c[n].uniform(lo_c, hi_c, size=(B, L, M))
        for m in range(M):
            for k in range(K):
                u[:, m, k] = self._u[m][k].uniform(*self._u_band[k], size=B)
        self._start = start
        self._buf = (a, c, xi, u)

    def sample(self, t):
        """Draws of slot ``t``; slots must be requested in increasing order."""
        if self._start is None or t >= self._start + self.block:
            if self._start is not None and t != self._start + self.block:
                raise ContractViolation("slots must be sampled consecutively")
            self._refill(0 if self._start is None else self._start + self.block)
        i = t - self._start
        if i < 0:
            raise ContractViolation("slots must be sampled consecutively")
        a, c, xi, u = self._buf
        return EnvironmentSample(a[i], c[i], xi[i], u[i])


def sample_environment(config, t, seed):
    """Draws of slot ``t`` for ``seed``, regenerated from the start of the streams."""
    sampler = EnvironmentSampler(config, seed, block=t + 1)
    return sampler.sample(t)


class SystemState:
    """All task buffers and delay state queues of one system."""

    def __init__(self, config):
        N, M, K = config.num_devices, config.num_servers, config.num_types
        self.config = config
        self.user_queues = [TimedFifoQueue() for _ in range(N)]
        self.user_Z = [DelayStateQueue() for _ in range(N)]
        self.server_queues = [[TimedFifoQueue() for _ in range(K)] for _ in range(M)]
        self.server_Z = [[DelayStateQueue() for _ in range(K)] for _ in range(M)]

    def snapshot(self):
        return QueueSnapshot(
            np.array([q.backlog for q in self.user_queues]),
            np.array([z.backlog for z in self.user_Z]),
            np.array([[q.backlog for q in row] for row in self.server_queues]),
            np.array([[z.backlog for z in row] for row in self.server_Z]),
        )


@dataclass
class SlotRecord:
    """Actual (not decided) volumes of one slot."""

    sent: np.ndarray  # per device, enters a VM
    user_dropped: np.ndarray  # per device
    completed: np.ndarray  # per owner device
    server_dropped: np.ndarray  # per owner device
    server_dropped_vm: np.ndarray  # per VM [m, k]
    delays: list = field(default_factory=list)


def step_slot(state, sample, decision, t, zeta_u, zeta_s):
    """Apply ``decision`` to ``state`` for slot ``t`` and return a :class:`SlotRecord`.

    The decision is checked against the per-slot constraints first; a policy
    producing an infeasible action is a bug and raises ``ContractViolation``.
    """
    cfg = state.config
    decision.check_feasible(sample.xi, sample.c, cfg.d_u_max, cfg.d_s_max, FEASIBILITY_ATOL)
    N, M, K = cfg.num_devices, cfg.num_servers, cfg.num_types
    types = cfg.device_type
    rec = SlotRecord(np.zeros(N), np.zeros(N), np.zeros(N), np.zeros(N), np.zeros((M, K)))
    delays = rec.delays
    arriving = [[[] for _ in range(K)] for _ in range(M)]
    s, d_u, a, server = decision.s, decision.d_u, sample.a, decision.server
    for n in range(N):
        _, _, departed, dropped = apply_user_slot(
            state.user_queues[n], state.user_Z[n], s[n], d_u[n], a[n], t, zeta_u[n], owner=n
        )
        for chunk in dropped:
            rec.user_dropped[n] += chunk.amount
            delays.append((n, -1, USER_DROP, chunk.amount, chunk.arrival_slot, t,
                           t - chunk.arrival_slot + 1, 0))
        if departed:
            rec.sent[n] = math.fsum(c.amount for c in departed)
            arriving[server[n]][types[n]].extend(departed)

    for m in range(M):
        for k in range(K):
            _, _, completed, dropped = apply_server_slot(
                state.server_queues[m][k], state.server_Z[m][k], sample.u[m, k],
                decision.d_s[m, k], arriving[m][k], t, zeta_s[m, k],
            )
            for kind, pieces, per_owner in (
                (SERVER_COMPLETE, completed, rec.completed),
                (SERVER_DROP, dropped, rec.server_dropped),
            ):
                for chunk in pieces:
                    per_owner[chunk.owner] += chunk.amount
                    h_u = chunk.server_arrival_slot
                    delays.append((chunk.owner, m, kind, chunk.amount, chunk.arrival_slot, t,
                                   h_u - chunk.arrival_slot + 1, t - h_u))
            rec.server_dropped_vm[m, k] = math.fsum(c.amount for c in dropped)
    return rec


@dataclass
class MetricsTrace:
    """Everything recorded during one run.

    Backlog arrays have ``horizon + 1`` rows (start of every slot plus the
    final state); per-slot volumes have ``horizon`` rows and hold actual
    amounts, so they respect buffer contents rather than decided rates.
    """

    horizon: int
    seed: int
    warmup: int
    policy: str
    Q_u: np.ndarray
    Z_u: np.ndarray
    Q_s: np.ndarray
    Z_s: np.ndarray
    arrivals: np.ndarray
    sent: np.ndarray
    user_dropped: np.ndarray
    completed: np.ndarray
    server_dropped: np.ndarray
    server_dropped_vm: np.ndarray
    decided_s: np.ndarray
    decided_d_u: np.ndarray
    decided_d_s: np.ndarray
    channel: np.ndarray
    server: np.ndarray
    delays: np.ndarray
    pending_age: np.ndarray
    conservation_error: np.ndarray
    decision_ms: np.ndarray
    auction_rounds: np.ndarray
    slot_gaps: object
    tau_max: np.ndarray
    Q_u_max: np.ndarray
    Q_s_max: np.ndarray
    utility_P: float
    utility_TP: float
    avg_arrival: np.ndarray
    avg_user_drop: np.ndarray
    avg_server_drop: np.ndarray
    avg_server_drop_vm: np.ndarray
    fitted_policy: object = None

    @property
    def total_delay(self):
        return self.delays["tau_u"] + self.delays["tau_s"]

    @property
    def max_total_delay(self):
        return int(self.total_delay.max()) if len(self.delays) else 0

    @property
    def mean_delay(self):
        """Amount-weighted total delay of units completed at a VM."""
        done = self.delays["kind"] == SERVER_COMPLETE
        if not done.any():
            return 0.0
        w = self.delays["amount"][done]
        return float(np.sum(w * self.total_delay[done]) / np.sum(w))

    @property
    def deadline_violations(self):
        late = self.total_delay > self.tau_max[self.delays["owner"]]
        return int(late.sum()) + int(np.sum(self.pending_age > self.tau_max))

    @property
    def buffer_violations(self):
        return int(np.sum(self.Q_u > self.Q_u_max)) + int(np.sum(self.Q_s > self.Q_s_max))

    @property
    def drop_rate(self):
        total = self.arrivals.sum()
        if total == 0:
            return 0.0
        return float((self.user_dropped.sum() + self.server_dropped.sum()) / total)

    def summary(self):
        return {
            "utility_P": self.utility_P,
            "utility_TP": self.utility_TP,
            "max_total_delay": self.max_total_delay,
            "mean_delay": self.mean_delay,
            "drop_rates": self.drop_rate,
            "violation_count": self.deadline_violations + self.buffer_violations,
            "auction_rounds": int(self.auction_rounds.sum()),
            "wall_ms_per_slot": float(self.decision_ms.mean()) if self.horizon else 0.0,
        }


def _objectives(config, avg_a, avg_du, avg_ds, avg_ds_vm):
    g = utility_of(config)
    P = float(np.sum(g.value(avg_a - avg_du - avg_ds)))
    TP = float(np.sum(g.value(avg_a - avg_du)) - g.beta * np.sum(avg_ds_vm))
    return P, TP


def make_policy(policy):
    if isinstance(policy, str):
        try:
            return POLICIES[policy]()
        except KeyError:
            raise ValueError(f"unknown policy {policy!r}; choose from {sorted(POLICIES)}") from None
    return clone(policy)


def run(config, policy="todg", horizon=None, seed=0, record_gaps=None, warmup=0):
    """Simulate ``horizon`` slots and return a :class:`MetricsTrace`.

    ``policy`` is a name from :data:`POLICIES` or an unfitted estimator (it is
    cloned, then fitted on ``config``).  ``record_gaps`` controls the
    per-slot comparison against a freshly solved matching; by default it is
    on for the offloading policy and samples every slot when ``N*L`` is small,
    every tenth slot otherwise.

    The time averages behind the utility objectives cover slots
    ``warmup .. horizon-1``; delays, bounds and violations cover every slot.
    """
    T = config.horizon if horizon is None else horizon
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"horizon must be an integer >= 1, got {T!r}")
    if not 0 <= warmup < T:
        raise ValueError(f"warmup must lie in [0, horizon), got {warmup!r}")
    name = policy if isinstance(policy, str) else type(policy).__name__
    est = make_policy(policy).fit(config)
    can_audit = hasattr(est, "optimal_offload")
    if record_gaps is None:
        record_gaps = can_audit
    if record_gaps and not can_audit:
        raise ValueError(f"policy {name} cannot report optimal decisions")
    stride = 1 if config.num_devices * config.num_channels <= GAP_FULL_AUDIT_LIMIT else GAP_STRIDE

    N, M, K = config.num_devices, config.num_servers, config.num_types
    sampler = EnvironmentSampler(config, seed)
    policy_rng = _stream(seed, _POLICY)
    state = SystemState(config)
    zeta_u, zeta_s = est.zeta_u_, est.zeta_s_

    Q_u = np.empty((T + 1, N))
    Z_u = np.empty((T + 1, N))
    Q_s = np.empty((T + 1, M, K))
    Z_s = np.empty((T + 1, M, K))
    per_n = {k: np.zeros((T, N)) for k in
             ("arrivals", "sent", "user_dropped", "completed", "server_dropped",
              "decided_s", "decided_d_u")}
    server_dropped_vm = np.zeros((T, M, K))
    decided_d_s = np.zeros((T, M, K))
    channel = np.empty((T, N), dtype=np.int64)
    server = np.empty((T, N), dtype=np.int64)
    decision_ms = np.empty(T)
    rounds = np.zeros(T, dtype=np.int64)
    conservation = np.empty(T)
    delays = []
    gaps = []
    cum_in_u = np.zeros(N)
    cum_out_u = np.zeros(N)
    cum_in_s = np.zeros((M, K))
    cum_out_s = np.zeros((M, K))

    for t in range(T):
        snap = state.snapshot()
        Q_u[t], Z_u[t], Q_s[t], Z_s[t] = snap.Q_u, snap.Z_u, snap.Q_s, snap.Z_s
        sample = sampler.sample(t)
        start = time.perf_counter()
        decision = est.decide(snap, sample, t, policy_rng)
        decision_ms[t] = (time.perf_counter() - start) * 1e3
        rounds[t] = est.last_rounds_
        if record_gaps and t % stride == 0:
            best = est.optimal_offload(snap, sample)
            cert = est.certificate_
            gap = (dual_objective(snap, decision, sample, est.epsilon_, config, cert, est.utility_)
                   - dual_objective(snap, best, sample, est.epsilon_, config, cert, est.utility_))
            gaps.append((t, t % est.delta_, gap))

        rec = step_slot(state, sample, decision, t, zeta_u, zeta_s)
        delays.extend(rec.delays)
        per_n["arrivals"][t] = sample.a
        per_n["sent"][t] = rec.sent
        per_n["user_dropped"][t] = rec.user_dropped
        per_n["completed"][t] = rec.completed
        per_n["server_dropped"][t] = rec.server_dropped
        per_n["decided_s"][t] = decision.s
        per_n["decided_d_u"][t] = decision.d_u
        server_dropped_vm[t] = rec.server_dropped_vm
        decided_d_s[t] = decision.d_s
        channel[t] = decision.channel
        server[t] = decision.server

        # conservation: arrivals = backlog + departures + drops, per queue
        cum_in_u += sample.a
        cum_out_u += rec.sent + rec.user_dropped
        np.add.at(cum_in_s, (np.maximum(decision.server, 0), config.device_type), rec.sent)
        done_vm = np.zeros((M, K))
        for piece in rec.delays:
            if piece[2] != USER_DROP:
                done_vm[piece[1], config.device_type[piece[0]]] += piece[3]
        cum_out_s += done_vm
        after = state.snapshot()
        conservation[t] = max(
            np.max(np.abs(cum_in_u - after.Q_u - cum_out_u)),
            np.max(np.abs(cum_in_s - after.Q_s - cum_out_s)),
        )

    final = state.snapshot()
    Q_u[T], Z_u[T], Q_s[T], Z_s[T] = final.Q_u, final.Z_u, final.Q_s, final.Z_s

    # lower bound on the eventual delay of volume still queued at the end
    pending = np.zeros(N, dtype=np.int64)
    for q in state.user_queues + [q for row in state.server_queues for q in row]:
        for chunk in q.chunks:
            pending[chunk.owner] = max(pending[chunk.owner], T - chunk.arrival_slot + 1)

    window = T - warmup
    avg_a = per_n["arrivals"][warmup:].sum(axis=0) / window
    avg_du = per_n["user_dropped"][warmup:].sum(axis=0) / window
    avg_ds = per_n["server_dropped"][warmup:].sum(axis=0) / window
    avg_ds_vm = server_dropped_vm[warmup:].sum(axis=0) / window
    P, TP = _objectives(config, avg_a, avg_du, avg_ds, avg_ds_vm)

    trace = MetricsTrace(
        horizon=T,
        seed=seed,
        warmup=warmup,
        policy=name,
        Q_u=Q_u, Z_u=Z_u, Q_s=Q_s, Z_s=Z_s,
        server_dropped_vm=server_dropped_vm,
        decided_d_s=decided_d_s,
        channel=channel,
        server=server,
        delays=np.array(delays, dtype=DELAY_DTYPE),
        pending_age=pending,
        conservation_error=conservation,
        decision_ms=decision_ms,
        auction_rounds=rounds,
        slot_gaps=np.array(gaps, dtype=GAP_DTYPE) if record_gaps else None,
        tau_max=config.tau_max,
        Q_u_max=config.Q_u_max,
        Q_s_max=config.Q_s_max,
        utility_P=P,
        utility_TP=TP,
        avg_arrival=avg_a,
        avg_user_drop=avg_du,
        avg_server_drop=avg_ds,
        avg_server_drop_vm=avg_ds_vm,
        fitted_policy=est,
        **per_n,
    )
    return trace
