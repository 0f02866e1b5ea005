"""Simulation and exact-analytics toolkit for probabilistic elementary-link
generation in quantum repeater networks."""

from .core import (
    EstimatorResult,
    LinkAgeState,
    LinkModel,
    MemoryPolicy,
    RateModel,
    Topology,
    effective_probability,
    trials_to_time,
)

__version__ = "0.1.0"

__all__ = [
    "EstimatorResult",
    "LinkAgeState",
    "LinkModel",
    "MemoryPolicy",
    "RateModel",
    "Topology",
    "effective_probability",
    "trials_to_time",
    "__version__",
]
