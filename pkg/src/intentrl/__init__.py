"""Intentional step sizes for streaming reinforcement learning.

Modules: ``approx`` (networks and gradients), ``intent`` (step-size rules and
optimizer state), ``agents`` (TD, Q and policy-gradient learners), ``envs``
(desk-scale tasks with exact oracles), ``diagnostics`` (fidelity, KL proxy,
FLOPs) and ``harness`` (experiment runner and CLI).
"""
from .errors import ConfigError, NumericalError

__version__ = "0.1.0"
__all__ = ["ConfigError", "NumericalError"]
