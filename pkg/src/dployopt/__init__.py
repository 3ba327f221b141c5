"""Deployment-configuration optimiser for on-device DNN inference.

Picks the model precision, compute engine, thread count, DVFS governor and
recognition rate that best serve a use-case on a given phone, from offline
measurement lookup tables, and simulates runtime re-configuration under
device load and thermal throttling.
"""

from .core import (
    BufferBudget,
    Design,
    DeviceProfile,
    Engine,
    ModelVariant,
    Precision,
    SystemConfig,
    enumerate_designs,
    estimate_buffers,
)
from .ingest import LookupTable, StatSummary, build_lookup, load_device_profile, load_measurements, load_variants
from .moo import MetricRef, MooProblem, is_feasible, metric_value, preset, scalar_score
from .optimizer import OptimizationResult, explain, optimize

__version__ = "0.1.0"
