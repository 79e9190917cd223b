"""Maximum-weight bipartite matching of devices (rows) to channels (columns).

Weight matrices hold strictly positive weights; excluded edges carry the
``-inf`` sentinel.  Three solvers share that contract:

* :func:`hungarian_solve` - centralized Kuhn-Munkres, O(max{N,L}^3).
* :func:`auction_solve` - a forward auction whose bidders are partitioned over
  simulated solver nodes that exchange bids in synchronous rounds.
* :func:`brute_force_match` - exhaustive enumeration, used as a test oracle.
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._validation import SENTINEL, ContractViolation, check_weight_matrix

__all__ = [
    "SENTINEL",
    "Matching",
    "AuctionNotConverged",
    "hungarian_solve",
    "auction_solve",
    "brute_force_match",
]

AUCTION_SCALE = 1e6
AUCTION_THETA = 8.0
BRUTE_FORCE_LIMIT = 8


class AuctionNotConverged(RuntimeError):
    """The auction ran out of its communication-round budget."""


@dataclass(frozen=True)
class Matching:
    pairs: tuple
    total_weight: float

    @classmethod
    def empty(cls):
        return cls((), 0.0)

    @classmethod
    def from_pairs(cls, W, pairs):
        pairs = tuple(sorted((int(r), int(c)) for r, c in pairs))
        rows = [r for r, _ in pairs]
        cols = [c for _, c in pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ContractViolation("a row or column is matched twice")
        weights = [W[r, c] for r, c in pairs]
        if any(not np.isfinite(w) for w in weights):
            raise ContractViolation("matching uses an excluded edge")
        return cls(pairs, math.fsum(weights))

    def as_dict(self):
        return dict(self.pairs)

    def __len__(self):
        return len(self.pairs)


# -- Kuhn-Munkres --------------------------------------------------------------


def _km_min_cost(cost):
    """Assign every row of ``cost`` (rows <= cols) minimising the total.

    Shortest augmenting paths with row/column potentials; one row is added per
    outer iteration.  Returns the column index chosen for each row.
    """
    n, m = cost.shape
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            reduced = a[i0] - u[i0] - v
            better = free & (reduced < minv)
            minv[better] = reduced[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    held = np.flatnonzero(p[1:]) + 1
    col_of_row[p[held] - 1] = held - 1
    return col_of_row


def hungarian_solve(W):
    """Maximum-total-weight matching by the Kuhn-Munkres method.

    Excluded edges are treated as zero-weight padding and stripped from the
    result, so rows or columns may stay unmatched.
    """
    W = check_weight_matrix(W)
    finite = np.isfinite(W)
    if not finite.any():
        return Matching.empty()
    transposed = W.shape[0] > W.shape[1]
    gain = np.where(finite, W, 0.0)
    if transposed:
        gain = gain.T
    col_of_row = _km_min_cost(-gain)
    pairs = [(r, c) for r, c in enumerate(col_of_row) if gain[r, c] > 0]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return Matching.from_pairs(W, pairs)


# -- distributed auction -----------------------------------------------------------


def _augmented_benefits(benefit):
    """Square problem with an opt-out for every row and column.

    Persons are the ``r`` rows plus one placeholder per column; objects are the
    ``c`` columns plus one placeholder per row.  A row may take its own
    placeholder at zero benefit (stay unmatched).  The placeholder person of
    column j may take column j (leave it free) or the placeholder of any row i
    with an edge (i, j): when row i takes column j, that slot is the one left.
    """
    r, c = benefit.shape
    n = r + c
    A = np.full((n, n), -np.inf)
    A[:r, :c] = benefit
    A[np.arange(r), c + np.arange(r)] = 0.0
    A[r + np.arange(c), np.arange(c)] = 0.0
    A[r:, c:] = np.where(np.isfinite(benefit.T), 0.0, -np.inf)
    return A


def auction_solve(W, num_servers=1, rounds_budget=1_000_000, hops=1, scale=AUCTION_SCALE):
    """Solve the matching with an epsilon-scaled forward auction.

    Rows are bidders and are spread round-robin over ``num_servers`` solver
    nodes; column placeholders are spread the same way.  In every synchronous
    round each node bids for its own unassigned persons and broadcasts its best
    bid per object; a max-consensus over a server mesh of diameter ``hops``
    costs ``hops`` communication rounds.  Weights are scaled by ``scale`` and
    rounded to integers; the final phase uses epsilon < 1/n, which makes the
    result exactly optimal on the scaled weights.

    Returns ``(matching, rounds_used)``.  Raises :class:`AuctionNotConverged`
    when ``rounds_budget`` is exhausted.
    """
    W = check_weight_matrix(W)
    if num_servers < 1 or hops < 1:
        raise ContractViolation("num_servers and hops must be >= 1")
    finite = np.isfinite(W)
    rows = np.flatnonzero(finite.any(axis=1))
    cols = np.flatnonzero(finite.any(axis=0))
    if rows.size == 0:
        return Matching.empty(), 0

    sub = W[np.ix_(rows, cols)]
    benefit = np.where(np.isfinite(sub), np.rint(sub * scale), -np.inf)
    A = _augmented_benefits(benefit)
    r, c = benefit.shape
    n = r + c
    node_of = np.concatenate([rows % num_servers, cols % num_servers])
    node_members = [np.flatnonzero(node_of == k) for k in range(num_servers)]

    prices = np.zeros(n)
    owner = np.full(n, -1, dtype=np.int64)  # object -> person
    holding = np.full(n, -1, dtype=np.int64)  # person -> object
    eps_final = 1.0 / (n + 1)
    top = float(np.max(A[np.isfinite(A)]))
    eps = max(top / AUCTION_THETA, eps_final)
    rounds = 0

    while True:
        owner.fill(-1)
        holding.fill(-1)
        while True:
            waiting = holding < 0
            if not waiting.any():
                break
            if rounds + hops > rounds_budget:
                raise AuctionNotConverged(
                    f"auction needed more than {rounds_budget} rounds "
                    f"({int(waiting.sum())} persons still unassigned)"
                )
            bidders, targets, bids = [], [], []
            for members in node_members:
                mine = members[waiting[members]]
                if mine.size == 0:
                    continue
                net = A[mine] - prices
                idx = np.arange(mine.size)
                best = np.argmax(net, axis=1)
                first = net[idx, best]
                net[idx, best] = -np.inf
                second = net.max(axis=1)
                bidders.append(mine)
                targets.append(best)
                bids.append(prices[best] + (first - second) + eps)
            rounds += hops
            bidders = np.concatenate(bidders)
            targets = np.concatenate(targets)
            bids = np.concatenate(bids)
            # highest bid per object wins, ties to the lowest person index
            order = np.lexsort((bidders, -bids, targets))
            sorted_targets = targets[order]
            lead = np.ones(order.size, dtype=bool)
            lead[1:] = sorted_targets[1:] != sorted_targets[:-1]
            win = order[lead]
            objs, persons = targets[win], bidders[win]
            evicted = owner[objs]
            holding[evicted[evicted >= 0]] = -1
            owner[objs] = persons
            holding[persons] = objs
            prices[objs] = bids[win]
        if eps <= eps_final:
            break
        eps = max(eps / AUCTION_THETA, eps_final)

    pairs = [
        (rows[i], cols[holding[i]])
        for i in range(r)
        if holding[i] < c and np.isfinite(benefit[i, holding[i]])
    ]
    return Matching.from_pairs(W, pairs), rounds


# -- oracle ----------------------------------------------------------------------


@lru_cache(maxsize=None)
def _permutations(n):
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)


def brute_force_match(W):
    """Enumerate every injective partial assignment and keep the best one.

    The matrix is zero-padded to a square; each permutation of the padded
    matrix corresponds to one partial assignment (pairs landing on padding or
    on excluded edges are simply unmatched), so scanning all permutations
    covers all partial assignments.
    """
    W = check_weight_matrix(W)
    R, C = W.shape
    if max(R, C) > BRUTE_FORCE_LIMIT:
        raise ContractViolation(
            f"brute force refuses {R}x{C}: dimension limit is {BRUTE_FORCE_LIMIT}"
        )
    if R == 0 or C == 0:
        return Matching.empty()
    n = max(R, C)
    padded = np.zeros((n, n))
    padded[:R, :C] = np.where(np.isfinite(W), W, 0.0)
    perms = _permutations(n)
    totals = padded[np.arange(n), perms].sum(axis=1)
    best = perms[int(np.argmax(totals))]
    pairs = [(i, best[i]) for i in range(R) if best[i] < C and np.isfinite(W[i, best[i]])]
    return Matching.from_pairs(W, pairs)
