"""Parameter selection, theoretical constants and trace auditing.

Parameter selection follows the delay-guarantee recipe: check that the drop
caps are large enough, pick the delay-penalty rates (zeta) from the buffer
sizes and deadlines, then cap the utility weight epsilon so that every task
buffer and delay state queue provably stays within its buffer size.
"""

from dataclasses import dataclass, field

import numpy as np

from .utility import UtilitySpec


class InfeasibleParameters(ValueError):
    """No parameter choice satisfies the delay/buffer guarantees."""


def _type_max(values_per_device, device_type, num_types):
    """Per-type maximum of a per-device array."""
    out = np.full(num_types, -np.inf)
    np.maximum.at(out, device_type, values_per_device)
    return out


def utility_of(config):
    return UtilitySpec(config.utility, config.utility_weight)


def check_drop_caps(config):
    """Check that the drop caps can absorb the worst case.

    Returns ``(ok, d_s_min, d_u_min)`` where the two arrays are the binding
    minimum drop caps per VM ``[m, k]`` and per device ``[n]``.  Raises
    :class:`InfeasibleParameters` when a device's deadline is too short for the
    server buffers to drain within it at full drop rate.
    """
    K = config.num_types
    types = config.device_type
    L = config.num_channels
    inv_tau = _type_max(1.0 / config.tau_max, types, K)  # max_{n in k} 1/tau_n
    d_s_min = np.maximum(config.channel_cap * L, 2.0 * config.Q_s_max * inv_tau[None, :])
    server_wait = (2.0 * config.Q_s_max / config.d_s_max).max(axis=0)  # per type k
    slack = config.tau_max - server_wait[types]
    if np.any(slack <= 0):
        n = int(np.flatnonzero(slack <= 0)[0])
        raise InfeasibleParameters(
            f"device {n}: deadline {config.tau_max[n]:g} slots cannot cover the server "
            f"drain time {server_wait[types[n]]:g}; enlarge server drop caps or the deadline"
        )
    d_u_min = np.maximum(config.a_max, 2.0 * config.Q_u_max / slack)
    ok = bool(np.all(config.d_s_max >= d_s_min) and np.all(config.d_u_max >= d_u_min))
    return ok, d_s_min, d_u_min


check_assumption1 = check_drop_caps

def select_zetas(config, margin=None):
    """Delay-penalty rates that make the worst-case delay fit the deadline.

    ``zeta_s`` sits a factor ``1 + margin`` above its strict lower bound;
    ``zeta_u`` is the smallest value satisfying the user-side inequality.
    Explicit rates in ``config`` take precedence and are only checked.
    """
    margin = config.zeta_margin if margin is None else margin
    if not margin > 0:
        raise InfeasibleParameters(f"zeta margin must be > 0 (strict inequality), got {margin}")
    K = config.num_types
    types = config.device_type
    inv_tau = _type_max(1.0 / config.tau_max, types, K)
    zeta_s_floor = 2.0 * config.Q_s_max * inv_tau[None, :]
    zeta_s = np.where(np.isnan(config.zeta_s), (1.0 + margin) * zeta_s_floor, config.zeta_s)
    if np.any(zeta_s <= zeta_s_floor):
        m, k = map(int, np.argwhere(zeta_s <= zeta_s_floor)[0])
        raise InfeasibleParameters(
            f"zeta_s[{m},{k}] = {zeta_s[m, k]:g} must exceed {zeta_s_floor[m, k]:g}"
        )
    server_wait = (2.0 * config.Q_s_max / zeta_s).max(axis=0)
    slack = config.tau_max - server_wait[types]
    if np.any(slack <= 0):
        n = int(np.flatnonzero(slack <= 0)[0])
        raise InfeasibleParameters(f"device {n}: no zeta_u meets its deadline")
    zeta_u_floor = 2.0 * config.Q_u_max / slack
    zeta_u = np.where(np.isnan(config.zeta_u), zeta_u_floor, config.zeta_u)
    if np.any(zeta_u < zeta_u_floor * (1 - 1e-12)):
        n = int(np.flatnonzero(zeta_u < zeta_u_floor)[0])
        raise InfeasibleParameters(f"zeta_u[{n}] = {zeta_u[n]:g} is below {zeta_u_floor[n]:g}")
    if np.any(zeta_u > config.d_u_max):
        n = int(np.flatnonzero(zeta_u > config.d_u_max)[0])
        raise InfeasibleParameters(
            f"zeta_u[{n}] = {zeta_u[n]:g} exceeds d_u_max = {config.d_u_max[n]:g}; "
            "use larger user drop caps"
        )
    if np.any(zeta_s > config.d_s_max):
        m, k = map(int, np.argwhere(zeta_s > config.d_s_max)[0])
        raise InfeasibleParameters(
            f"zeta_s[{m},{k}] = {zeta_s[m, k]:g} exceeds d_s_max = {config.d_s_max[m, k]:g}; "
            "use larger server drop caps"
        )
    return zeta_u, zeta_s


def select_epsilon(config, zeta_u, zeta_s, beta=None):
    """Largest admissible epsilon and its two ingredients.

    Returns ``(epsilon_max, epsilon_u, epsilon_s)``.
    """
    beta = utility_of(config).beta if beta is None else beta
    eps_u = float(np.min(config.Q_u_max - np.maximum(config.a_max, zeta_u)))
    eps_s = float(
        np.min(config.Q_s_max - np.maximum(config.channel_cap * config.num_channels, zeta_s))
    )
    eps_max = min(eps_u, eps_s) / beta
    if eps_max <= 0:
        raise InfeasibleParameters(
            f"epsilon bound {eps_max:g} <= 0: buffers too small for the chosen zeta "
            f"(epsilon_u = {eps_u:g}, epsilon_s = {eps_s:g})"
        )
    return eps_max, eps_u, eps_s


@dataclass
class ParameterCertificate:
    zeta_u: np.ndarray
    zeta_s: np.ndarray
    epsilon: float
    epsilon_max: float
    epsilon_u: float
    epsilon_s: float
    beta: float
    drop_caps_ok: bool
    w_u: np.ndarray = field(repr=False)
    w_s: np.ndarray = field(repr=False)
    violations: list = field(default_factory=list)

    @property
    def valid(self):
        return self.drop_caps_ok and not self.violations


def certify(config, epsilon=None, margin=None):
    """Select (zeta, epsilon) and record whether the guarantees apply.

    ``epsilon`` overrides ``config.epsilon``; when both are None the largest
    admissible value is used.  An epsilon above the bound is allowed (for
    fault-injection runs) but yields an invalid certificate.
    """
    ok, _, _ = check_drop_caps(config)
    zeta_u, zeta_s = select_zetas(config, margin)
    beta = utility_of(config).beta
    eps_max, eps_u, eps_s = select_epsilon(config, zeta_u, zeta_s, beta)
    if epsilon is None:
        epsilon = config.epsilon if config.epsilon is not None else eps_max
    violations = []
    if not ok:
        violations.append("drop caps below the required minima")
    if epsilon > eps_max * (1 + 1e-12):
        violations.append(f"epsilon {epsilon:g} exceeds the bound {eps_max:g}")
    return ParameterCertificate(
        zeta_u=zeta_u,
        zeta_s=zeta_s,
        epsilon=float(epsilon),
        epsilon_max=eps_max,
        epsilon_u=eps_u,
        epsilon_s=eps_s,
        beta=beta,
        drop_caps_ok=ok,
        w_u=2.0 * config.Q_u_max / zeta_u,
        w_s=2.0 * config.Q_s_max / zeta_s,
        violations=violations,
    )


# -- constants and bounds ------------------------------------------------------


def constant_C(config):
    """Constant of the one-slot drift-plus-penalty upper bound."""
    user = np.sum(config.a_max**2 + (config.xi_max + config.d_u_max) ** 2)
    server = np.sum(
        (config.channel_cap * config.num_channels) ** 2 + (config.u_max + config.d_s_max) ** 2
    )
    return float(user + server)


def constant_G(config):
    """Per-slot loss bound of reusing a stale channel assignment."""
    return float(
        2.0 * config.channel_cap * np.max(config.Q_u_max)
        * min(config.num_devices, config.num_channels)
    )


def gap_bound(C, G, delta, epsilon, config=None):
    """Optimality-gap bound ``(C + (delta - 1) G / 2) / epsilon``.

    With ``config`` given, also returns the buffer/deadline form whose
    denominator depends only on buffer sizes and deadlines.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    numerator = C + (delta - 1) * G / 2.0
    bound = numerator / epsilon
    if config is None:
        return bound
    term_a = float(np.min((1.0 - 2.0 / config.tau_max) * config.Q_u_max))
    inv_tau = _type_max(2.0 / config.tau_max, config.device_type, config.num_types)
    term_b = float(np.min((1.0 - inv_tau[None, :]) * config.Q_s_max))
    return bound, numerator / min(term_a, term_b)


def dual_objective(snapshot, decision, sample, epsilon, config, certificate, utility=None):
    """Upper bound of the one-slot drift-plus-penalty for a candidate decision.

    VM arrivals are the committed transmit amounts ``s`` (the quantity the
    offloading sub-problem optimises), not the buffer-limited departures.
    """
    utility = utility_of(config) if utility is None else utility
    beta = certificate.beta
    types = config.device_type
    Qu, Zu, Qs, Zs = snapshot.Q_u, snapshot.Z_u, snapshot.Q_s, snapshot.Z_s
    s, d_u, d_s = decision.s, decision.d_u, decision.d_s
    a_s = np.zeros_like(Qs)
    active = np.flatnonzero(decision.server >= 0)
    np.add.at(a_s, (decision.server[active], types[active]), s[active])
    penalty = np.sum(utility.value(sample.a - d_u)) - beta * np.sum(d_s)
    user = np.sum(Qu * (sample.a - s - d_u) + Zu * (certificate.zeta_u - s - d_u))
    server = np.sum(Qs * (a_s - sample.u - d_s) + Zs * (certificate.zeta_s - sample.u - d_s))
    return float(constant_C(config) - epsilon * penalty + user + server)


# -- auditing ---------------------------------------------------------------------


@dataclass
class AuditCheck:
    name: str
    passed: bool
    worst_margin: float
    slot: int = -1

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}\t{status}\t{self.worst_margin:.6g}\t{self.slot}"


@dataclass
class AuditReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self):
        return "\n".join(["name\tstatus\tworst_margin\tslot"] + [c.line() for c in self.checks])


def _bound_check(name, values, bound, atol=1e-9):
    """``values[t, i] <= bound[i]`` for every slot; margin = min(bound - value)."""
    if values.size == 0:
        return AuditCheck(name, True, np.inf)
    slack = (bound - values).reshape(values.shape[0], -1)
    per_slot = slack.min(axis=1)
    t = int(np.argmin(per_slot))
    worst = float(per_slot[t])
    return AuditCheck(name, worst >= -atol, worst, t)


def audit_trace(trace, certificate, config):
    """Check every provable guarantee against a recorded run."""
    eps, beta = certificate.epsilon, certificate.beta
    L = config.num_channels
    checks = [
        _bound_check("user_queue_bound", trace.Q_u, beta * eps + config.a_max),
        _bound_check("server_queue_bound", trace.Q_s, beta * eps + config.channel_cap * L),
        _bound_check("user_delay_state_bound", trace.Z_u, beta * eps + certificate.zeta_u),
        _bound_check("server_delay_state_bound", trace.Z_s, beta * eps + certificate.zeta_s),
        _bound_check("user_buffer_cap", trace.Q_u, config.Q_u_max),
        _bound_check("server_buffer_cap", trace.Q_s, config.Q_s_max),
        _bound_check("user_delay_state_cap", trace.Z_u, config.Q_u_max),
        _bound_check("server_delay_state_cap", trace.Z_s, config.Q_s_max),
    ]

    rec = trace.delays
    tau_max = config.tau_max[rec["owner"]] if len(rec) else np.zeros(0)
    total = rec["tau_u"] + rec["tau_s"]
    for kind in ("user_drop", "server_complete", "server_drop"):
        sel = rec["kind"] == kind
        if sel.any():
            slack = tau_max[sel] - total[sel]
            i = int(np.argmin(slack))
            checks.append(AuditCheck(f"deadline_{kind}", bool(slack[i] >= 0), float(slack[i]),
                                     int(rec["exit_slot"][sel][i])))
        else:
            checks.append(AuditCheck(f"deadline_{kind}", True, np.inf))
    if trace.pending_age.size:
        slack = config.tau_max - trace.pending_age
        i = int(np.argmin(slack))
        checks.append(AuditCheck("deadline_pending", bool(slack[i] >= 0), float(slack[i]),
                                 trace.horizon - 1))

    # per-queue worst delays against 2 Q_max / zeta
    if len(rec):
        up = rec["kind"] != "user_drop"
        slack_u = certificate.w_u[rec["owner"]] - rec["tau_u"]
        i = int(np.argmin(slack_u))
        checks.append(AuditCheck("user_queue_delay_bound", bool(slack_u[i] >= 0),
                                 float(slack_u[i]), int(rec["exit_slot"][i])))
        if up.any():
            w_s = certificate.w_s[rec["server"][up], config.device_type[rec["owner"][up]]]
            slack_s = w_s - rec["tau_s"][up]
            i = int(np.argmin(slack_s))
            checks.append(AuditCheck("server_queue_delay_bound", bool(slack_s[i] >= 0),
                                     float(slack_s[i]), int(rec["exit_slot"][up][i])))

    if trace.slot_gaps is not None and len(trace.slot_gaps):
        G = constant_G(config)
        gaps = trace.slot_gaps
        slack = gaps["q"] * G - gaps["gap"]
        boundary = gaps["q"] == 0
        i = int(np.argmin(slack))
        ok = bool(np.all(slack >= 0) and np.all(gaps["gap"][boundary] == 0))
        checks.append(AuditCheck("periodic_slot_gap", ok, float(slack[i]), int(gaps["t"][i])))

    worst = float(np.max(np.abs(trace.conservation_error))) if trace.conservation_error.size else 0.0
    checks.append(AuditCheck("conservation", worst <= 1e-9, -worst,
                             int(np.argmax(np.abs(trace.conservation_error)))
                             if trace.conservation_error.size else -1))
    return AuditReport(checks)
