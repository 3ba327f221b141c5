"""Domain types for models, devices and deployment designs.

A design is a model variant (a reference model after one precision
transformation) plus a system configuration: compute engine, CPU thread
count, DVFS governor and recognition rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import EmptySpace, InputError

MIB = 1024 * 1024
DEFAULT_R_GRID = (0.25, 0.5, 1.0)
DEFAULT_INTERMEDIATE_FACTOR = 0.25
# camera frames are decoded to float before preprocessing
INPUT_BYTES_PER_ELEMENT = 4


class Engine(str, Enum):
    CPU = "CPU"
    GPU = "GPU"
    NNAPI = "NNAPI"

    @classmethod
    def parse(cls, value) -> "Engine":
        if isinstance(value, Engine):
            return value
        text = str(value).strip().upper()
        if text == "NPU":
            return cls.NNAPI
        return cls(text)


ENGINE_ORDER = {e: i for i, e in enumerate(Engine)}


class Precision(str, Enum):
    FP32 = "FP32"
    FP16 = "FP16"
    INT8 = "INT8"

    @property
    def bytes_per_param(self) -> int:
        return {"FP32": 4, "FP16": 2, "INT8": 1}[self.value]


# FP32 doubles as the identity transformation.
Transform = Precision


class Task(str, Enum):
    CLASSIFICATION = "Classification"
    SEGMENTATION = "Segmentation"


def parse_task(value):
    """Known tasks map to :class:`Task`; anything else is kept as a string."""
    try:
        return Task(value)
    except ValueError:
        return str(value)


@dataclass(frozen=True)
class ModelVariant:
    model_id: str
    task: object
    workload_flops: float
    param_count: int
    model_size_mib: float
    input_resolution: tuple
    accuracy: float
    precision: Precision
    transform: Transform = Precision.FP32
    parent_id: Optional[str] = None
    name: str = ""
    accuracy_estimated: bool = False

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise InputError(f"{self.model_id}: accuracy must be in [0, 1], got {self.accuracy}")
        for attr in ("workload_flops", "param_count", "model_size_mib"):
            if not getattr(self, attr) > 0:
                raise InputError(f"{self.model_id}: {attr} must be > 0")
        if len(self.input_resolution) != 3 or min(self.input_resolution) < 1:
            raise InputError(f"{self.model_id}: input_resolution must be (height, width, channels)")
        if self.transform is not Precision.FP32 and not self.parent_id:
            raise InputError(f"{self.model_id}: transformed variant needs a parent_id")

    @property
    def bytes_per_param(self) -> int:
        return self.precision.bytes_per_param


@dataclass(frozen=True)
class DeviceProfile:
    device_id: str
    engines: frozenset
    n_cores: int
    memory_capacity_mib: float
    governors: tuple
    battery_mah: float = 0.0
    os_version: str = ""
    camera: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if Engine.CPU not in self.engines:
            raise InputError(f"{self.device_id}: CPU engine must be present")
        if self.n_cores < 1:
            raise InputError(f"{self.device_id}: n_cores must be >= 1")
        if not self.memory_capacity_mib > 0:
            raise InputError(f"{self.device_id}: memory_capacity_mib must be > 0")
        if not self.governors:
            raise InputError(f"{self.device_id}: at least one governor is required")


@dataclass(frozen=True)
class SystemConfig:
    engine: Engine
    n_threads: int
    governor: str
    recognition_rate: float = 1.0

    def __post_init__(self):
        if self.n_threads < 1:
            raise InputError("n_threads must be >= 1")
        if self.engine is not Engine.CPU and self.n_threads != 1:
            raise InputError(f"{self.engine.value} designs run with n_threads=1")
        if not 0.0 < self.recognition_rate <= 1.0:
            raise InputError(f"recognition_rate must be in (0, 1], got {self.recognition_rate}")


@dataclass(frozen=True)
class Design:
    model: ModelVariant
    config: SystemConfig

    @property
    def table_key(self) -> tuple:
        """Lookup-table key; the recognition rate is applied analytically."""
        c = self.config
        return (self.model.model_id, self.model.transform.value, c.engine.value, c.n_threads, c.governor)

    @property
    def key(self) -> tuple:
        return self.table_key + (self.config.recognition_rate,)

    @property
    def sort_key(self) -> tuple:
        c = self.config
        return (self.model.model_id, ENGINE_ORDER[c.engine], c.n_threads, c.governor, c.recognition_rate)

    def is_valid_for(self, device: DeviceProfile) -> bool:
        c = self.config
        return (
            c.engine in device.engines
            and c.n_threads <= device.n_cores
            and c.governor in device.governors
        )

    def label(self) -> str:
        c = self.config
        return f"{self.model.model_id}/{c.engine.value}x{c.n_threads}/{c.governor}/r={c.recognition_rate:g}"

    def as_row(self) -> dict:
        c = self.config
        return {
            "model_id": self.model.model_id,
            "transform": self.model.transform.value,
            "engine": c.engine.value,
            "n_threads": c.n_threads,
            "governor": c.governor,
            "r": c.recognition_rate,
        }


@dataclass(frozen=True)
class BufferBudget:
    input_buffer_mib: float
    model_buffer_mib: float
    intermediate_buffer_mib: float

    @property
    def total_mib(self) -> float:
        return self.input_buffer_mib + self.model_buffer_mib + self.intermediate_buffer_mib


def enumerate_designs(
    variants: Sequence[ModelVariant],
    device: DeviceProfile,
    r_grid: Iterable[float] = DEFAULT_R_GRID,
) -> list[Design]:
    """Every valid design for ``device``, in ascending
    (model_id, engine, threads, governor, r) order.

    CPU expands over 1..n_cores threads; GPU and NNAPI appear once each
    with a single thread, and only when the device has them.
    """
    if not variants:
        raise EmptySpace("no model variants to search over")
    rates = sorted(set(float(r) for r in r_grid))
    if not rates:
        raise InputError("r_grid must not be empty")
    if any(not 0.0 < r <= 1.0 for r in rates):
        raise InputError(f"r_grid values must be in (0, 1], got {rates}")

    unique = {}
    for v in variants:
        unique.setdefault(v.model_id, v)
    governors = sorted(set(device.governors))
    engine_threads = []
    for engine in Engine:
        if engine not in device.engines:
            continue
        threads = range(1, device.n_cores + 1) if engine is Engine.CPU else (1,)
        engine_threads.extend((engine, t) for t in threads)

    designs = []
    for model_id in sorted(unique):
        variant = unique[model_id]
        for engine, threads in engine_threads:
            for governor in governors:
                for r in rates:
                    designs.append(Design(variant, SystemConfig(engine, threads, governor, r)))
    return designs


def design_space_size(n_variants: int, device: DeviceProfile, n_rates: int) -> int:
    configs = device.n_cores + sum(1 for e in device.engines if e is not Engine.CPU)
    return n_variants * configs * len(set(device.governors)) * n_rates


def estimate_buffers(
    model: ModelVariant, intermediate_factor: float = DEFAULT_INTERMEDIATE_FACTOR
) -> BufferBudget:
    """Static buffer sizes (MiB) a model swap needs: input, weights, activations.

    Intermediate activations have no closed form here, so they are sized as
    a fraction of the weight buffer.
    """
    if intermediate_factor < 0:
        raise InputError("intermediate_factor must be >= 0")
    h, w, c = model.input_resolution
    input_bytes = h * w * c * INPUT_BYTES_PER_ELEMENT
    model_bytes = model.param_count * model.bytes_per_param
    return BufferBudget(
        input_buffer_mib=input_bytes / MIB,
        model_buffer_mib=model_bytes / MIB,
        intermediate_buffer_mib=intermediate_factor * model_bytes / MIB,
    )
