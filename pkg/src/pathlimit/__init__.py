"""Time-sliced path integrals: propagators, least-action paths and path sampling."""

__version__ = "0.1.0"

from .action import (  # noqa: E402
    EUCLIDEAN,
    REAL_TIME,
    ActionBreakdown,
    PotentialSpec,
    SystemPaths,
    SystemSpec,
    TimeGrid,
    action_decompose,
    discrete_action,
    discrete_euclidean_action,
)
from .propagator import GridWaveFunction, KernelMatrix, SpatialGrid, build_kernel, compose, evolve  # noqa: E402

__all__ = [
    "EUCLIDEAN",
    "REAL_TIME",
    "ActionBreakdown",
    "GridWaveFunction",
    "KernelMatrix",
    "PotentialSpec",
    "SpatialGrid",
    "SystemPaths",
    "SystemSpec",
    "TimeGrid",
    "action_decompose",
    "build_kernel",
    "compose",
    "discrete_action",
    "discrete_euclidean_action",
    "evolve",
]
