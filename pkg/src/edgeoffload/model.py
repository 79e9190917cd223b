"""Task buffers, delay state queues and the per-slot queue dynamics.

Task volume is a fluid: a chunk of arrivals can be split at any point when
the head of a buffer is served.  Every chunk remembers which device produced
it and when, so that per-unit queuing delays can be measured exactly.
"""

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import ContractViolation, check_nonnegative

# Remainders smaller than this are treated as fully served.
AMOUNT_ATOL = 1e-12

USER_DROP = "user_drop"
SERVER_COMPLETE = "server_complete"
SERVER_DROP = "server_drop"
EXIT_KINDS = (USER_DROP, SERVER_COMPLETE, SERVER_DROP)


@dataclass(slots=True)
class TaskChunk:
    amount: float
    arrival_slot: int
    owner: int
    server_arrival_slot: Optional[int] = None

    def split(self, amount):
        """Detach ``amount`` from the front of this chunk and return it."""
        self.amount -= amount
        return TaskChunk(amount, self.arrival_slot, self.owner, self.server_arrival_slot)


class TimedFifoQueue:
    """FIFO buffer of :class:`TaskChunk`; the head is the oldest chunk."""

    __slots__ = ("chunks", "backlog")

    def __init__(self, chunks=()):
        self.chunks = deque(chunks)
        self.backlog = float(sum(c.amount for c in self.chunks))

    def __len__(self):
        return len(self.chunks)

    def __repr__(self):
        return f"TimedFifoQueue(backlog={self.backlog:.6g}, chunks={len(self.chunks)})"

    def append(self, chunk):
        if chunk.amount <= 0:
            return
        self.chunks.append(chunk)
        self.backlog += chunk.amount

    def pop_head(self, amount):
        """Remove up to ``amount`` from the head; return the removed pieces."""
        out = []
        remaining = min(amount, self.backlog)
        chunks = self.chunks
        while remaining > AMOUNT_ATOL and chunks:
            head = chunks[0]
            if head.amount <= remaining + AMOUNT_ATOL:
                chunks.popleft()
                out.append(head)
                remaining -= head.amount
            else:
                out.append(head.split(remaining))
                remaining = 0.0
        if chunks:
            self.backlog = max(self.backlog - sum(c.amount for c in out), 0.0)
        else:
            self.backlog = 0.0
        return out

    def recompute_backlog(self):
        return float(sum(c.amount for c in self.chunks))

    def oldest_arrival(self):
        return self.chunks[0].arrival_slot if self.chunks else None


class DelayStateQueue:
    """Scalar virtual queue ``Z(t+1) = max{Z(t) - service + zeta, 0}``."""

    __slots__ = ("backlog",)

    def __init__(self, backlog=0.0):
        if backlog < 0:
            raise ContractViolation("delay state backlog must be >= 0")
        self.backlog = float(backlog)

    def __repr__(self):
        return f"DelayStateQueue(backlog={self.backlog:.6g})"

    def update(self, service, zeta):
        self.backlog = max(self.backlog - service + zeta, 0.0)
        return self.backlog


@dataclass(frozen=True)
class QueueSnapshot:
    """Start-of-slot backlogs seen by a policy.

    ``Q_u``, ``Z_u`` are per device ``[n]``; ``Q_s``, ``Z_s`` per VM ``[m, k]``.
    """

    Q_u: np.ndarray
    Z_u: np.ndarray
    Q_s: np.ndarray
    Z_s: np.ndarray

    @classmethod
    def zeros(cls, num_devices, num_servers, num_types):
        return cls(
            np.zeros(num_devices),
            np.zeros(num_devices),
            np.zeros((num_servers, num_types)),
            np.zeros((num_servers, num_types)),
        )


@dataclass
class SlotDecision:
    """One slot's control action in compact form.

    ``channel[n]`` and ``server[n]`` are -1 for idle devices; the dense binary
    tensor ``z[n, l, m]`` is available through :meth:`z`.
    """

    channel: np.ndarray
    server: np.ndarray
    s: np.ndarray
    d_u: np.ndarray
    d_s: np.ndarray

    @classmethod
    def idle(cls, num_devices, num_servers, num_types):
        return cls(
            channel=np.full(num_devices, -1, dtype=np.int64),
            server=np.full(num_devices, -1, dtype=np.int64),
            s=np.zeros(num_devices),
            d_u=np.zeros(num_devices),
            d_s=np.zeros((num_servers, num_types)),
        )

    def z(self, num_channels, num_servers):
        out = np.zeros((len(self.channel), num_channels, num_servers), dtype=np.int8)
        active = np.flatnonzero(self.channel >= 0)
        out[active, self.channel[active], self.server[active]] = 1
        return out

    def check_feasible(self, xi, c, d_u_max, d_s_max, atol=0.0):
        """Raise ``ContractViolation`` unless the per-slot constraints hold.

        ``c`` is the capacity tensor ``c[n, l, m]`` of this slot.
        """
        ch, sv = self.channel, self.server
        active = ch >= 0
        if np.any(active != (sv >= 0)):
            raise ContractViolation("device has a channel without a server (or vice versa)")
        L = c.shape[1]
        M = c.shape[2]
        if np.any(ch[active] >= L) or np.any(sv[active] >= M):
            raise ContractViolation("channel or server index out of range")
        used = ch[active]
        if len(np.unique(used)) != len(used):
            raise ContractViolation("a channel is assigned to more than one device")
        if np.any(self.s < 0) or np.any(self.s > xi + atol):
            raise ContractViolation("transmit amount outside [0, xi]")
        cap = np.zeros_like(self.s)
        idx = np.flatnonzero(active)
        cap[idx] = c[idx, ch[idx], sv[idx]]
        if np.any(self.s > cap + atol):
            raise ContractViolation("transmit amount exceeds the assigned channel capacity")
        if np.any(self.d_u < 0) or np.any(self.d_u > d_u_max + atol):
            raise ContractViolation("user drop outside [0, d_u_max]")
        if np.any(self.d_s < 0) or np.any(self.d_s > d_s_max + atol):
            raise ContractViolation("server drop outside [0, d_s_max]")


def _serve(queue, first, second):
    """Remove ``first + second`` from the head, split into the two outputs."""
    primary = queue.pop_head(first) if first > 0 else []
    secondary = queue.pop_head(second) if second > 0 else []
    return primary, secondary


def apply_user_slot(queue, Z, s, d, a, t, zeta_u, owner=0):
    """Advance a device buffer and its delay state queue by one slot.

    The combined output ``min{s + d, backlog}`` leaves from the head; the first
    ``min{s, backlog}`` units are transmitted, the rest dropped.  Arrivals are
    appended afterwards, so they cannot leave in their own slot.  ``queue`` and
    ``Z`` are updated in place and returned.
    """
    for name, value in (("s", s), ("d", d), ("a", a), ("zeta_u", zeta_u)):
        check_nonnegative(name, value)
    departed, dropped = _serve(queue, s, d)
    if a > 0:
        queue.append(TaskChunk(float(a), t, owner))
    Z.update(s + d, zeta_u)
    return queue, Z, departed, dropped


def apply_server_slot(queue, Z, u, d, arriving, t, zeta_s):
    """Advance a VM buffer by one slot; arrivals are stamped with slot ``t``."""
    for name, value in (("u", u), ("d", d), ("zeta_s", zeta_s)):
        check_nonnegative(name, value)
    completed, dropped = _serve(queue, u, d)
    for chunk in arriving:
        if chunk.server_arrival_slot is not None and chunk.server_arrival_slot != t:
            raise ContractViolation("arriving chunk already carries a server timestamp")
        chunk.server_arrival_slot = t
        queue.append(chunk)
    Z.update(u + d, zeta_s)
    return queue, Z, completed, dropped


def measure_delay(chunk, exit_slot, exit_kind):
    """Return ``(tau_u, tau_s)`` in slots for a piece leaving the system."""
    if exit_kind not in EXIT_KINDS:
        raise ContractViolation(f"unknown exit kind {exit_kind!r}")
    if exit_slot < chunk.arrival_slot:
        raise ContractViolation("exit before arrival")
    if exit_kind == USER_DROP:
        return exit_slot - chunk.arrival_slot + 1, 0
    h_u = chunk.server_arrival_slot
    if h_u is None:
        raise ContractViolation("server-side exit of a chunk that never reached a server")
    if exit_slot < h_u or h_u < chunk.arrival_slot:
        raise ContractViolation("timestamps out of order")
    return h_u - chunk.arrival_slot + 1, exit_slot - h_u
