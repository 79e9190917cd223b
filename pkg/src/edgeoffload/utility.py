"""Concave per-device utility functions g(x) with g(0) = 0."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UtilitySpec:
    """``log1p``: g(x) = w*ln(1+x); ``linear``: g(x) = w*x.

    The log utility is continued linearly (slope ``w``) for x < 0, which keeps
    it concave, nondecreasing and differentiable.  The drop sub-problem can ask
    for g(a - d) with d > a, so the extension is needed.
    """

    kind: str = "log1p"
    weight: object = 1.0

    def __post_init__(self):
        if self.kind not in ("log1p", "linear"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        w = np.asarray(self.weight, dtype=float)
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("utility weights must be finite and > 0")

    @property
    def beta(self):
        """Largest first derivative over all devices."""
        return float(np.max(self.weight))

    def value(self, x, weight=None):
        w = self.weight if weight is None else weight
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return w * x
        return w * np.where(x >= 0, np.log1p(np.maximum(x, 0.0)), x)

    def derivative(self, x, weight=None):
        w = self.weight if weight is None else weight
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return w * np.ones_like(x)
        return w / (1.0 + np.maximum(x, 0.0))

    def inverse_derivative(self, y, weight=None):
        """Solve g'(x) = y; NaN where ``y`` is outside the invertible range.

        For ``log1p`` the range is (0, w] and g'^-1(y) = w/y - 1.  A linear
        utility has a constant derivative, so it is never invertible.
        """
        w = self.weight if weight is None else weight
        y = np.asarray(y, dtype=float)
        if self.kind == "linear":
            return np.full(np.broadcast(y, w).shape, np.nan)
        ok = (y > 0) & (y <= w)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(ok, w / np.where(ok, y, 1.0) - 1.0, np.nan)
