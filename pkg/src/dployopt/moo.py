"""Objectives, constraints and the three use-case formulations.

Metrics are latency, throughput (fps), peak memory and accuracy.  A
problem is scalarised either by epsilon-constraints (one objective, the
rest bounded) or by a weighted sum of normalised objectives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .core import Design
from .errors import InputError, MissingNormalizer, MissingReference
from .ingest import LookupTable, parse_statistic

# absorbs decimal noise in accuracy drops such as 0.718 - 0.708
ACCURACY_TOL = 1e-12


class Metric(str, Enum):
    LATENCY = "latency"
    FPS = "fps"
    MEMORY = "memory"
    ACCURACY = "accuracy"


class Mode(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"
    TARGET = "target"


class Direction(str, Enum):
    AT_MOST = "at_most"
    AT_LEAST = "at_least"
    # value >= reference_accuracy - bound, i.e. the accuracy drop is at most bound
    AT_LEAST_DROP = "at_least_drop"


@dataclass(frozen=True)
class MetricRef:
    metric: Metric
    statistic: str = "scalar"

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        stat = parse_statistic(self.statistic)
        if self.metric in (Metric.MEMORY, Metric.ACCURACY):
            stat = "scalar"
        elif stat == "scalar":
            stat = "median"
        object.__setattr__(self, "statistic", stat)

    def __str__(self) -> str:
        if self.statistic == "scalar":
            return self.metric.value
        return f"{self.metric.value}[{self.statistic}]"


@dataclass(frozen=True)
class ObjectiveSpec:
    ref: MetricRef
    mode: Mode = Mode.MAXIMIZE
    weight: float = 1.0
    target: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise InputError(f"objective weight must be > 0, got {self.weight}")
        if self.mode is Mode.TARGET and (self.target is None or not math.isfinite(self.target)):
            raise InputError("target objectives need a finite target value")


@dataclass(frozen=True)
class ConstraintSpec:
    ref: MetricRef
    bound: float
    direction: Direction = Direction.AT_MOST

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if math.isnan(self.bound):
            raise InputError("constraint bound must be a number")
        # +inf is allowed for drop tolerances ("any drop"), nothing else
        if math.isinf(self.bound) and self.direction is not Direction.AT_LEAST_DROP:
            raise InputError("constraint bound must be finite")

    def __str__(self) -> str:
        op = {Direction.AT_MOST: "<=", Direction.AT_LEAST: ">=", Direction.AT_LEAST_DROP: "drop<="}
        return f"{self.ref} {op[self.direction]} {self.bound:g}"


@dataclass(frozen=True)
class MooProblem:
    objectives: tuple
    constraints: tuple = ()
    reference_accuracy: Optional[float] = None
    # per-metric normalisers, e.g. {Metric.ACCURACY: a_max, Metric.FPS: fps_max}
    normalizers: Optional[dict] = field(default=None, hash=False)
    normalize_over_feasible: bool = True

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.objectives:
            raise InputError("a problem needs at least one objective")
        if self.normalizers:
            norms = {Metric(k): float(v) for k, v in self.normalizers.items()}
            if any(not v > 0 for v in norms.values()):
                raise InputError("normalizers must be positive")
            object.__setattr__(self, "normalizers", norms)

    def refs(self) -> list:
        """Every metric reference the problem reads, without duplicates."""
        seen = {}
        for o in self.objectives:
            seen.setdefault(o.ref, None)
        for c in self.constraints:
            seen.setdefault(c.ref, None)
        return list(seen)

    def with_reference(self, reference_accuracy: float) -> "MooProblem":
        return MooProblem(self.objectives, self.constraints, reference_accuracy,
                          self.normalizers, self.normalize_over_feasible)


# -- evaluation ----------------------------------------------------------------

def metric_value(design: Design, table: LookupTable, ref: MetricRef) -> float:
    """Value of one metric for ``design``.

    Throughput is the effective frame rate the design sustains: running on
    a fraction r of frames keeps up with a stream 1/r times faster.
    Latency, memory and accuracy do not depend on r.
    """
    if ref.metric is Metric.ACCURACY:
        return design.model.accuracy
    summary = table.get(design.table_key)
    if ref.metric is Metric.LATENCY:
        return summary.latency(ref.statistic)
    if ref.metric is Metric.FPS:
        return summary.throughput(ref.statistic) / design.config.recognition_rate
    return summary.peak_mem_mib


def constraint_satisfied(c: ConstraintSpec, value: float, reference_accuracy: Optional[float]) -> bool:
    if c.direction is Direction.AT_MOST:
        return value <= c.bound
    if c.direction is Direction.AT_LEAST:
        return value >= c.bound
    if reference_accuracy is None:
        raise MissingReference(f"constraint '{c}' needs reference_accuracy")
    return reference_accuracy - value <= c.bound + ACCURACY_TOL


def is_feasible(design: Design, table: LookupTable, problem: MooProblem) -> tuple[bool, list]:
    """Check every constraint; returns ``(feasible, violated constraints)``."""
    violated = [
        c for c in problem.constraints
        if not constraint_satisfied(c, metric_value(design, table, c.ref), problem.reference_accuracy)
    ]
    return not violated, violated


def _target_normalizer(target: float) -> float:
    return abs(target) if target != 0 else 1.0


def objective_term(obj: ObjectiveSpec, value: float, normalizer: float) -> float:
    if obj.mode is Mode.MAXIMIZE:
        term = value / normalizer
    elif obj.mode is Mode.MINIMIZE:
        term = -value / normalizer
    else:
        term = -abs(value - obj.target) / _target_normalizer(obj.target)
    return obj.weight * term


def resolve_normalizer(problem: MooProblem, obj: ObjectiveSpec, observed: Optional[dict]) -> float:
    if obj.mode is Mode.TARGET:
        return _target_normalizer(obj.target)
    if problem.normalizers and obj.ref.metric in problem.normalizers:
        return problem.normalizers[obj.ref.metric]
    if observed and obj.ref in observed:
        return observed[obj.ref] if observed[obj.ref] > 0 else 1.0
    if len(problem.objectives) == 1:
        return 1.0
    raise MissingNormalizer(f"no normaliser for objective {obj.ref}")


def scalar_score(design: Design, table: LookupTable, problem: MooProblem,
                 observed: Optional[dict] = None) -> float:
    """Weighted sum of normalised objective terms.

    ``observed`` maps a MetricRef to the largest value of that metric over
    the design space being ranked; explicit ``problem.normalizers`` win.
    """
    total = 0.0
    for obj in problem.objectives:
        value = metric_value(design, table, obj.ref)
        total += objective_term(obj, value, resolve_normalizer(problem, obj, observed))
    return total


# -- use-case presets ----------------------------------------------------------

class UseCase(str, Enum):
    MAX_FPS = "maxfps"
    TARGET_LATENCY = "target-latency"
    MAX_ACC_MAX_FPS = "maxacc-maxfps"


DEFAULT_STAT = {
    UseCase.MAX_FPS: "avg",
    UseCase.TARGET_LATENCY: "p90",
    UseCase.MAX_ACC_MAX_FPS: "avg",
}


def max_fps(epsilon: float, stat: str = "avg", reference_accuracy: Optional[float] = None) -> MooProblem:
    """Maximise throughput with accuracy drop at most ``epsilon``."""
    if not epsilon >= 0:
        raise InputError("epsilon must be >= 0")
    return MooProblem(
        objectives=(ObjectiveSpec(MetricRef(Metric.FPS, stat), Mode.MAXIMIZE),),
        constraints=(ConstraintSpec(MetricRef(Metric.ACCURACY), epsilon, Direction.AT_LEAST_DROP),),
        reference_accuracy=reference_accuracy,
    )


def target_latency(t_target: float, stat: str = "p90") -> MooProblem:
    """Maximise accuracy with the latency statistic at most ``t_target`` ms."""
    if not t_target > 0:
        raise InputError("target latency must be > 0")
    return MooProblem(
        objectives=(ObjectiveSpec(MetricRef(Metric.ACCURACY), Mode.MAXIMIZE),),
        constraints=(ConstraintSpec(MetricRef(Metric.LATENCY, stat), t_target, Direction.AT_MOST),),
    )


def max_acc_max_fps(w_fps: float = 1.0, stat: str = "avg", normalizers: Optional[dict] = None) -> MooProblem:
    """Weighted sum a/a_max + w_fps * fps/fps_max, no constraints."""
    if not w_fps >= 0:
        raise InputError("w_fps must be >= 0")
    objectives = [ObjectiveSpec(MetricRef(Metric.ACCURACY), Mode.MAXIMIZE, 1.0)]
    if w_fps > 0:
        objectives.append(ObjectiveSpec(MetricRef(Metric.FPS, stat), Mode.MAXIMIZE, w_fps))
    return MooProblem(objectives=tuple(objectives), normalizers=normalizers)


def preset(use_case, value: float, stat: Optional[str] = None, **kwargs) -> MooProblem:
    use_case = UseCase(use_case)
    stat = stat or DEFAULT_STAT[use_case]
    if use_case is UseCase.MAX_FPS:
        return max_fps(value, stat, **kwargs)
    if use_case is UseCase.TARGET_LATENCY:
        return target_latency(value, stat)
    return max_acc_max_fps(value, stat, **kwargs)


# -- JSON ----------------------------------------------------------------------

def _ref_from(obj: dict) -> MetricRef:
    try:
        return MetricRef(Metric(obj["metric"]), obj.get("statistic", "scalar"))
    except KeyError:
        raise InputError("objective/constraint needs a 'metric'") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None


def problem_from_dict(data: dict) -> MooProblem:
    try:
        objectives = [
            ObjectiveSpec(_ref_from(o), Mode(o.get("mode", "maximize")),
                          float(o.get("weight", 1.0)), o.get("target"))
            for o in data.get("objectives", [])
        ]
        constraints = [
            ConstraintSpec(_ref_from(c), float(c["bound"]), Direction(c.get("direction", "at_most")))
            for c in data.get("constraints", [])
        ]
    except (KeyError, ValueError) as exc:
        raise InputError(f"invalid problem: {exc}") from None
    norms = data.get("normalizers")
    return MooProblem(
        objectives=objectives,
        constraints=constraints,
        reference_accuracy=data.get("reference_accuracy"),
        normalizers=norms,
        normalize_over_feasible=data.get("normalize_over", "feasible") == "feasible",
    )


def problem_to_dict(problem: MooProblem) -> dict:
    out = {
        "objectives": [
            {"metric": o.ref.metric.value, "statistic": o.ref.statistic, "mode": o.mode.value,
             "weight": o.weight, **({"target": o.target} if o.mode is Mode.TARGET else {})}
            for o in problem.objectives
        ],
        "constraints": [
            {"metric": c.ref.metric.value, "statistic": c.ref.statistic,
             "direction": c.direction.value, "bound": c.bound}
            for c in problem.constraints
        ],
        "reference_accuracy": problem.reference_accuracy,
    }
    if problem.normalizers:
        out["normalizers"] = {k.value: v for k, v in problem.normalizers.items()}
    if not problem.normalize_over_feasible:
        out["normalize_over"] = "all"
    return out
