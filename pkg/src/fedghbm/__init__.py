"""Federated optimisation simulator with generalized heavy-ball momentum."""

from .algorithms import AlgoKind
from .config import PartitionSpec, RunConfig, SamplerSpec, TaskSpec
from .engine import RunResult, final_quality, rounds_to_target, run

__all__ = [
    "AlgoKind",
    "PartitionSpec",
    "RunConfig",
    "RunResult",
    "SamplerSpec",
    "TaskSpec",
    "final_quality",
    "rounds_to_target",
    "run",
]

__version__ = "0.1.0"
