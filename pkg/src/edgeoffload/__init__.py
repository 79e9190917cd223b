"""Slotted-time edge offloading simulator with delay-guaranteed control."""

from .analysis import audit_trace, certify
from .baselines import GreedyPolicy, RandomPolicy
from .config import SystemConfig, parse_config
from .engine import MetricsTrace, run
from .policy import TODGPolicy

__all__ = [
    "GreedyPolicy",
    "MetricsTrace",
    "RandomPolicy",
    "SystemConfig",
    "TODGPolicy",
    "audit_trace",
    "certify",
    "parse_config",
    "run",
]
