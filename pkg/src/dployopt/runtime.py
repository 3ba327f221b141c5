"""Runtime manager: detects sustained latency drift and re-optimises.

Observed latencies are compared, one window at a time, against the
lookup-table median of the running design.  Each engine carries a
degradation multiplier d >= 1 (observed / expected latency).  After
``confirm_windows`` consecutive windows whose ratio departs from d by
more than ``trigger_threshold``, the manager re-runs the optimiser on a
table scaled by d and switches only if the new design clears
``switch_margin``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import DEFAULT_R_GRID, Design, DeviceProfile, Engine, ModelVariant
from .devicesim import Observation, Scenario, SimTrace, run_scenario
from .errors import InputError, NoFeasibleDesign
from .ingest import LookupTable, nearest_rank
from .moo import MooProblem, is_feasible, scalar_score
from .optimizer import optimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManagerConfig:
    window_size: int = 10
    trigger_threshold: float = 0.10
    confirm_windows: int = 3
    switch_margin: float = 0.05
    ewma_alpha: float = 0.3
    staleness_halflife_windows: int = 10

    def __post_init__(self):
        for name in ("trigger_threshold", "switch_margin", "ewma_alpha"):
            if not 0 < getattr(self, name) < 1:
                raise InputError(f"{name} must be in (0, 1)")
        for name in ("window_size", "confirm_windows", "staleness_halflife_windows"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")


@dataclass
class ManagerState:
    design: Design
    d: dict = field(default_factory=lambda: {e: 1.0 for e in Engine})
    window: list = field(default_factory=list)
    window_index: int = 0
    trigger_count: int = 0
    fired: int = 0


class RuntimeManager:
    def __init__(
        self,
        design: Design,
        table: LookupTable,
        problem: MooProblem,
        variants: Sequence[ModelVariant],
        device: DeviceProfile,
        r_grid=DEFAULT_R_GRID,
        config: ManagerConfig = ManagerConfig(),
    ):
        self.table = table
        self.problem = problem
        self.variants = list(variants)
        self.device = device
        self.r_grid = tuple(r_grid)
        self.config = config
        self.state = ManagerState(design)
        self.log: list[dict] = []
        self._decay = 0.5 ** (1.0 / config.staleness_halflife_windows)

    @property
    def design(self) -> Design:
        return self.state.design

    def expected_latency(self, design: Design) -> float:
        return self.table.get(design.table_key).median_ms

    def observe(self, obs: Observation) -> bool:
        """Buffer one observation; returns True when the trigger fires."""
        st = self.state
        if not obs.inferred or obs.observed_latency_ms is None or obs.design != st.design:
            return False
        st.window.append(obs.observed_latency_ms)
        if len(st.window) < self.config.window_size:
            return False

        cfg = self.config
        engine = st.design.config.engine
        ratio = nearest_rank(sorted(st.window), 50) / self.expected_latency(st.design)
        st.window = []
        st.window_index += 1
        prior = st.d[engine]
        if abs(ratio - prior) / prior > cfg.trigger_threshold:
            st.trigger_count += 1
        else:
            st.trigger_count = 0
        for e in st.d:
            if e is engine:
                st.d[e] = max(1.0, (1 - cfg.ewma_alpha) * prior + cfg.ewma_alpha * ratio)
            else:
                st.d[e] = 1.0 + (st.d[e] - 1.0) * self._decay
        fired = st.trigger_count >= cfg.confirm_windows
        if fired:
            st.fired += 1
        self.log.append({
            "window": st.window_index,
            "engine": engine.value,
            "ratio": ratio,
            "d": {e.value: st.d[e] for e in Engine},
            "trigger": fired,
            "switched_to": None,
        })
        return fired

    def adjusted_table(self) -> LookupTable:
        return self.table.scaled_by_engine({e: d for e, d in self.state.d.items()})

    def adapt(self) -> Optional[Design]:
        """Re-search the degradation-adjusted table; returns a design to switch to, or None."""
        st = self.state
        st.trigger_count = 0
        adjusted = self.adjusted_table()
        try:
            result = optimize(self.variants, self.device, adjusted, self.problem, self.r_grid, top_k=1)
        except NoFeasibleDesign:
            log.warning("no feasible design under current degradation; keeping %s", st.design.label())
            return None
        best = result.best
        if best == st.design:
            return None
        feasible, _ = is_feasible(st.design, adjusted, self.problem)
        if feasible:
            current = scalar_score(st.design, adjusted, self.problem, result.normalizers)
            if result.best_score - current <= self.config.switch_margin * max(abs(current), 1e-12):
                return None
        return best

    def on_observation(self, obs: Observation) -> Optional[Design]:
        if not self.observe(obs):
            return None
        new = self.adapt()
        if new is not None:
            self.log[-1]["switched_to"] = new.config.engine.value
            self.state.design = new
            self.state.window = []
        return new

    def write_log(self, dest) -> None:
        """One JSON object per monitoring window."""
        if not hasattr(dest, "write"):
            with open(dest, "w", encoding="utf-8") as fh:
                return self.write_log(fh)
        for record in self.log:
            dest.write(json.dumps(record) + "\n")


def run_managed(
    design: Design,
    problem: MooProblem,
    variants: Sequence[ModelVariant],
    device: DeviceProfile,
    table: LookupTable,
    scenario: Scenario,
    config: ManagerConfig = ManagerConfig(),
    r_grid=DEFAULT_R_GRID,
) -> tuple[SimTrace, RuntimeManager]:
    """Simulate the scenario with the manager in the loop."""
    manager = RuntimeManager(design, table, problem, variants, device, r_grid, config)
    trace = run_scenario(design, table, scenario, manager=manager)
    return trace, manager
