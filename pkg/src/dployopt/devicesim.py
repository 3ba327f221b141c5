"""Discrete-time simulation of a device running one design.

Each step is one camera frame.  Per-engine load factors and a hysteretic
thermal model scale the design's table median latency; a seeded uniform
jitter is applied on top.  The active design can be swapped by a runtime
manager, at the cost of one reload step.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

from .core import Design, Engine
from .errors import InputError
from .ingest import LookupTable, _read_json, data_path, nearest_rank

DEFAULT_SWITCH_PENALTY = 2.0
TRACE_HEADER = ["step", "engine", "inferred", "observed_latency_ms", "load_factor", "throttled", "switched_to"]

# governor hooks: (heat multiplier, cooling multiplier)
GOVERNOR_HOOKS = {
    "performance": (1.0, 0.5),
    "energy_step": (0.5, 1.0),
}


@dataclass(frozen=True)
class LoadEvent:
    start_step: int
    engine: Engine
    factor: float


class LoadTrace:
    """Piecewise-constant load multiplier per engine (1.0 before any event)."""

    def __init__(self, events: Sequence[LoadEvent] = ()):
        self.events = tuple(events)
        self._by_engine = {}
        for ev in self.events:
            if ev.factor < 1:
                raise InputError(f"load factor must be >= 1, got {ev.factor}")
            steps = self._by_engine.setdefault(ev.engine, [])
            if steps and ev.start_step < steps[-1][0]:
                raise InputError(f"load events for {ev.engine.value} must have nondecreasing start_step")
            steps.append((ev.start_step, ev.factor))

    def factor(self, engine: Engine, step: int) -> float:
        value = 1.0
        for start, factor in self._by_engine.get(engine, ()):
            if start > step:
                break
            value = factor
        return value


@dataclass(frozen=True)
class ThermalParams:
    heat_per_inference: float
    cooling_per_step: float
    throttle_threshold: float
    release_threshold: float
    throttle_factor: float

    def __post_init__(self):
        if not self.release_threshold < self.throttle_threshold:
            raise InputError("release_threshold must be below throttle_threshold")
        if self.throttle_factor < 1:
            raise InputError("throttle_factor must be >= 1")
        if self.heat_per_inference < 0 or self.cooling_per_step < 0:
            raise InputError("heat and cooling rates must be >= 0")


@dataclass(frozen=True)
class SimState:
    step: int  # completed steps
    design: Design
    heat: dict  # engine -> heat units
    throttled: dict  # engine -> bool
    seed: int
    pending_switch: Optional[Design] = None


@dataclass(frozen=True)
class Observation:
    step: int
    inferred: bool
    observed_latency_ms: Optional[float]
    engine: Engine
    design: Design
    heat: dict
    load_factor: float
    throttled: bool
    switched_to: Optional[Design] = None


@dataclass
class Scenario:
    seed: int = 0
    steps: int = 100
    jitter: float = 0.0
    switch_penalty: float = DEFAULT_SWITCH_PENALTY
    load_trace: LoadTrace = field(default_factory=LoadTrace)
    thermal: dict = field(default_factory=dict)  # Engine -> ThermalParams
    context: dict = field(default_factory=dict)  # optional defaults for the CLI


@dataclass
class SwitchEvent:
    step: int
    from_design: Design
    to_design: Design


@dataclass
class SimTrace:
    observations: list
    switches: list

    def latencies(self) -> list:
        return [o.observed_latency_ms for o in self.observations if o.observed_latency_ms is not None]

    def summary(self) -> dict:
        lat = sorted(self.latencies())
        if not lat:
            return {"steps": len(self.observations), "inferences": 0, "switches": len(self.switches)}
        return {
            "steps": len(self.observations),
            "inferences": sum(o.inferred for o in self.observations),
            "mean_latency_ms": math.fsum(lat) / len(lat),
            "median_latency_ms": nearest_rank(lat, 50),
            "p90_latency_ms": nearest_rank(lat, 90),
            "switches": len(self.switches),
            "engines": [e.value for e in self.engine_sequence()],
        }

    def engine_sequence(self) -> list:
        if not self.observations:
            return []
        seq = [self.observations[0].design.config.engine]
        seq += [s.to_design.config.engine for s in self.switches]
        return seq

    def write_csv(self, dest) -> None:
        if not hasattr(dest, "write"):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.write_csv(fh)
        writer = csv.writer(dest, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for o in self.observations:
            writer.writerow([
                o.step, o.engine.value, int(o.inferred),
                "" if o.observed_latency_ms is None else repr(o.observed_latency_ms),
                repr(o.load_factor), int(o.throttled),
                o.switched_to.config.engine.value if o.switched_to else "",
            ])


def infers_at(step: int, rate: float) -> bool:
    """Evenly spread invocations: step k runs iff floor(k*r) > floor((k-1)*r)."""
    r = Fraction(str(rate))
    return math.floor(step * r) > math.floor((step - 1) * r)


def noise(seed: int, step: int, jitter: float) -> float:
    if not jitter:
        return 0.0
    # per-step stream keeps step() a pure function of (seed, step)
    return random.Random(f"{seed}:{step}").uniform(-jitter, jitter)


def initial_state(design: Design, seed: int = 0) -> SimState:
    engines = list(Engine)
    return SimState(0, design, {e: 0.0 for e in engines}, {e: False for e in engines}, seed)


def step(
    state: SimState,
    table: LookupTable,
    trace: LoadTrace,
    thermal: dict,
    jitter: float = 0.0,
    switch_penalty: float = DEFAULT_SWITCH_PENALTY,
) -> tuple[SimState, Observation]:
    """Advance one frame.

    Latency uses the throttle flags as they stood at the start of the step;
    heat, cooling and the hysteretic flag update happen afterwards.
    """
    k = state.step + 1
    switched_to = None
    design = state.design
    if state.pending_switch is not None:
        switched_to = design = state.pending_switch
    engine = design.config.engine
    base = table.get(design.table_key).median_ms
    load = trace.factor(engine, k)
    throttled = state.throttled[engine]
    params = thermal.get(engine)

    heat_mult, cool_mult = GOVERNOR_HOOKS.get(design.config.governor, (1.0, 1.0))
    if switched_to is not None:
        # model reload: no inference this frame
        inferred = False
        latency = base * switch_penalty
    else:
        inferred = infers_at(k, design.config.recognition_rate)
        latency = None
        if inferred:
            latency = base * load
            if throttled and params is not None:
                latency *= params.throttle_factor
            latency *= 1.0 + noise(state.seed, k, jitter)

    heat = dict(state.heat)
    flags = dict(state.throttled)
    if inferred and params is not None:
        heat[engine] += params.heat_per_inference * heat_mult
    for e, p in thermal.items():
        heat[e] = max(0.0, heat[e] - p.cooling_per_step * cool_mult)
        if not flags[e] and heat[e] >= p.throttle_threshold:
            flags[e] = True
        elif flags[e] and heat[e] < p.release_threshold:
            flags[e] = False

    obs = Observation(k, inferred, latency, engine, design, heat, load, throttled and params is not None,
                      switched_to)
    return replace(state, step=k, design=design, heat=heat, throttled=flags, pending_switch=None), obs


def run_scenario(
    design: Design,
    table: LookupTable,
    scenario: Scenario,
    manager=None,
    steps: Optional[int] = None,
) -> SimTrace:
    """Run ``steps`` frames; with ``manager`` absent the design never changes.

    ``manager`` is any object with ``on_observation(obs) -> Optional[Design]``;
    a returned design is loaded on the following step.
    """
    n = scenario.steps if steps is None else steps
    if n < 1:
        raise InputError("steps must be >= 1")
    state = initial_state(design, scenario.seed)
    observations, switches = [], []
    for _ in range(n):
        previous = state.design
        state, obs = step(state, table, scenario.load_trace, scenario.thermal,
                          scenario.jitter, scenario.switch_penalty)
        observations.append(obs)
        if obs.switched_to is not None:
            switches.append(SwitchEvent(obs.step, previous, obs.switched_to))
        if manager is not None:
            new_design = manager.on_observation(obs)
            if new_design is not None and new_design != state.design:
                state = replace(state, pending_switch=new_design)
    return SimTrace(observations, switches)


# -- scenario files --------------------------------------------------------------

def scenario_from_dict(data: dict) -> Scenario:
    try:
        events = [LoadEvent(int(e["start_step"]), Engine.parse(e["engine"]), float(e["factor"]))
                  for e in data.get("load_trace", [])]
        thermal = {Engine.parse(name): ThermalParams(**{k: float(v) for k, v in p.items()})
                   for name, p in (data.get("thermal") or {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid scenario: {exc}") from None
    scenario = Scenario(
        seed=int(data.get("seed", 0)),
        steps=int(data.get("steps", 100)),
        jitter=float(data.get("jitter", 0.0)),
        switch_penalty=float(data.get("switch_penalty", DEFAULT_SWITCH_PENALTY)),
        load_trace=LoadTrace(events),
        thermal=thermal,
        context=dict(data.get("context") or {}),
    )
    if not 0 <= scenario.jitter < 1:
        raise InputError("jitter must be in [0, 1)")
    if scenario.switch_penalty < 0:
        raise InputError("switch_penalty must be >= 0")
    return scenario


def load_scenario(source) -> Scenario:
    return scenario_from_dict(_read_json(source))


def bundled_scenario(name: str) -> Scenario:
    return load_scenario(data_path("scenarios", f"{name}.json"))


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "seed": s.seed, "steps": s.steps, "jitter": s.jitter, "switch_penalty": s.switch_penalty,
        "load_trace": [{"start_step": e.start_step, "engine": e.engine.value, "factor": e.factor}
                       for e in s.load_trace.events],
        "thermal": {e.value: vars(p).copy() for e, p in s.thermal.items()},
        **({"context": s.context} if s.context else {}),
    }


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2)
