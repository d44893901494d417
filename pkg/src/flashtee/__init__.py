"""flashtee: a deterministic discrete-event simulator of a computational
SSD with an in-storage trusted execution environment."""

from .bench import (
    RunConfig,
    RunOutcome,
    RunReport,
    emit_report,
    load_config,
    run_scenario,
    run_sweep,
)
from .flash import FlashGeometry, LatencyConfig, total_capacity
from .kernel import Kernel, Resource, ResourcePool, Rng
from .workloads import WORKLOADS, Dataset, generate_trace, verify_result

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FlashGeometry",
    "Kernel",
    "LatencyConfig",
    "Resource",
    "ResourcePool",
    "Rng",
    "RunConfig",
    "RunOutcome",
    "RunReport",
    "WORKLOADS",
    "emit_report",
    "generate_trace",
    "load_config",
    "run_scenario",
    "run_sweep",
    "total_capacity",
    "verify_result",
]
