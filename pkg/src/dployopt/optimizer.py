"""Exhaustive search of the design space over a lookup table."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import DEFAULT_R_GRID, Design, DeviceProfile, ModelVariant, enumerate_designs
from .errors import MissingEntry, NoFeasibleDesign
from .ingest import LookupTable
from .moo import (
    Metric,
    MetricRef,
    Mode,
    MooProblem,
    constraint_satisfied,
    metric_value,
    objective_term,
    resolve_normalizer,
)

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 10
MEDIAN_LATENCY = MetricRef(Metric.LATENCY, "median")


@dataclass
class OptimizationResult:
    best: Optional[Design]
    best_score: float
    feasible_count: int
    evaluated_count: int
    ranked: list  # (Design, score), best first
    infeasibility_report: dict
    problem: Optional[MooProblem] = field(default=None, repr=False)
    normalizers: dict = field(default_factory=dict, repr=False)
    skipped: list = field(default_factory=list, repr=False)


def tie_break_key(design: Design, score: float, table: LookupTable) -> tuple:
    """Total order: higher score, then lower peak memory, then lower
    median latency, then the design key."""
    summary = table.get(design.table_key)
    return (-score, summary.peak_mem_mib, summary.median_ms, design.sort_key)


def observed_maxima(values: Sequence[dict], problem: MooProblem) -> dict:
    """Largest value of each Maximize/Minimize objective metric in ``values``."""
    out = {}
    for obj in problem.objectives:
        if obj.mode is Mode.TARGET or not values:
            continue
        out[obj.ref] = max(v[obj.ref] for v in values)
    return out


def optimize(
    variants: Sequence[ModelVariant],
    device: DeviceProfile,
    table: LookupTable,
    problem: MooProblem,
    r_grid=DEFAULT_R_GRID,
    top_k: int = DEFAULT_TOP_K,
    skip_missing: bool = False,
    raise_on_infeasible: bool = True,
) -> OptimizationResult:
    """Evaluate every design, keep the feasible ones and rank them.

    Missing lookup entries are an error unless ``skip_missing`` is set, in
    which case they are logged and left out of the ranking.
    """
    designs = enumerate_designs(variants, device, r_grid)
    refs = problem.refs()
    evaluated = []  # (design, {ref: value})
    skipped = []
    for design in designs:
        if design.table_key not in table:
            if not skip_missing:
                raise MissingEntry(design.table_key)
            skipped.append(design)
            continue
        evaluated.append((design, {ref: metric_value(design, table, ref) for ref in refs}))
    if skipped:
        log.warning("skipped %d designs with no lookup entry", len(skipped))

    violations = Counter({str(c): 0 for c in problem.constraints})
    feasible = []
    for design, values in evaluated:
        ok = True
        for c in problem.constraints:
            if not constraint_satisfied(c, values[c.ref], problem.reference_accuracy):
                violations[str(c)] += 1
                ok = False
        if ok:
            feasible.append((design, values))

    pool = feasible if problem.normalize_over_feasible else evaluated
    maxima = observed_maxima([v for _, v in pool], problem)
    norms = {obj.ref: resolve_normalizer(problem, obj, maxima) for obj in problem.objectives}

    scored = []
    for design, values in feasible:
        score = 0.0
        for obj in problem.objectives:
            score += objective_term(obj, values[obj.ref], norms[obj.ref])
        scored.append((tie_break_key(design, score, table), design, score))
    scored.sort(key=lambda t: t[0])

    report = dict(violations)
    result = OptimizationResult(
        best=scored[0][1] if scored else None,
        best_score=scored[0][2] if scored else float("-inf"),
        feasible_count=len(feasible),
        evaluated_count=len(evaluated),
        ranked=[(d, s) for _, d, s in scored[:top_k]],
        infeasibility_report=report,
        problem=problem,
        normalizers=norms,
        skipped=skipped,
    )
    if not scored and raise_on_infeasible:
        err = NoFeasibleDesign(report, len(evaluated))
        err.result = result
        raise err
    return result


def explain(result: OptimizationResult, table: LookupTable) -> dict:
    """Plain-dict report of the ranked designs and every metric the problem reads."""
    problem = result.problem
    refs = problem.refs() if problem else [MEDIAN_LATENCY]
    if MEDIAN_LATENCY not in refs:
        refs = refs + [MEDIAN_LATENCY]
    rows = []
    for rank, (design, score) in enumerate(result.ranked, start=1):
        row = {"rank": rank, **design.as_row(), "score": score, "feasible": True}
        row["metrics"] = {str(ref): metric_value(design, table, ref) for ref in refs}
        rows.append(row)
    best = result.best.as_row() if result.best else None
    return {
        "best": best,
        "best_score": result.best_score if result.best else None,
        "feasible_count": result.feasible_count,
        "evaluated_count": result.evaluated_count,
        "ranked": rows,
        "infeasibility_report": dict(result.infeasibility_report),
        "normalizers": {str(k): v for k, v in result.normalizers.items()},
    }
