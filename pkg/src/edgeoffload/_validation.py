"""Input validation helpers shared by the estimators and solvers."""

import numbers

import numpy as np

SENTINEL = -np.inf


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


_FAST_SCALARS = (float, int, np.float64)


def check_nonnegative(name, value):
    if type(value) in _FAST_SCALARS:
        if not 0 <= value < np.inf:
            raise ContractViolation(f"{name} must be finite and >= 0, got {value!r}")
        return float(value)
    if isinstance(value, np.ndarray):
        if np.any(~np.isfinite(value)) or np.any(value < 0):
            raise ContractViolation(f"{name} must be finite and >= 0")
        return value
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ContractViolation(f"{name} must be finite and >= 0, got {value!r}")
    return float(value)


def check_weight_matrix(W):
    """Return ``W`` as a 2-D float array of positive weights or ``-inf`` sentinels."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1 and W.size == 0:
        W = W.reshape(0, 0)
    if W.ndim != 2:
        raise ContractViolation(f"weight matrix must be 2-D, got shape {W.shape}")
    if np.isnan(W).any() or np.isposinf(W).any():
        raise ContractViolation("weight matrix contains NaN or +inf")
    finite = np.isfinite(W)
    if np.any(W[finite] <= 0):
        raise ContractViolation("finite weights must be strictly positive")
    return W

