"""Parsing of device profiles, variant catalogs and measurement runs, and
aggregation of runs into the per-design statistics lookup table.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import Design, DeviceProfile, Engine, ModelVariant, Precision, parse_task
from .errors import (
    EmptyRuns,
    InputError,
    MalformedRow,
    MissingEntry,
    MissingField,
    NegativeLatency,
    NonPositiveCores,
    UnknownEngine,
)

log = logging.getLogger(__name__)

CSV_HEADER = ["model_id", "transform", "engine", "n_threads", "governor",
              "run_index", "latency_ms", "peak_mem_mib", "fps"]
DEFAULT_PERCENTILES = (50, 90, 95, 99)
DEFAULT_WARMUP = 15


# -- sources -----------------------------------------------------------------

def data_path(*parts: str) -> Path:
    """Path of a file bundled under ``dployopt/data``."""
    return Path(str(resources.files("dployopt").joinpath("data", *parts)))


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return source.decode("utf-8")
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


def _read_json(source):
    text = _read_text(source)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc}") from None


def _require(obj: dict, name: str, where: str):
    if name not in obj or obj[name] is None:
        raise MissingField(name, where)
    return obj[name]


# -- device profiles -----------------------------------------------------------

def device_from_dict(obj: dict) -> DeviceProfile:
    where = "device profile"
    device_id = str(_require(obj, "device_id", where))
    engines = set()
    for raw in _require(obj, "engines", where):
        try:
            engines.add(Engine.parse(raw))
        except ValueError:
            raise UnknownEngine(raw) from None
    if not engines:
        raise InputError("field 'engines' must not be empty")
    n_cores = _require(obj, "n_cores", where)
    if not isinstance(n_cores, int) or n_cores < 1:
        raise NonPositiveCores(n_cores)
    memory = _require(obj, "memory_capacity_mib", where)
    if not memory > 0:
        raise InputError(f"field 'memory_capacity_mib' must be > 0, got {memory}")
    governors = tuple(dict.fromkeys(str(g) for g in _require(obj, "governors", where)))
    if not governors:
        raise InputError("field 'governors' must not be empty")
    if Engine.CPU not in engines:
        raise InputError("field 'engines' must include CPU")
    return DeviceProfile(
        device_id=device_id,
        engines=frozenset(engines),
        n_cores=n_cores,
        memory_capacity_mib=memory,
        governors=governors,
        battery_mah=_require(obj, "battery_mah", where),
        os_version=str(_require(obj, "os_version", where)),
        camera={str(k): str(v) for k, v in (obj.get("camera") or {}).items()},
    )


def load_device_profile(source) -> DeviceProfile:
    """Parse a device profile from a path, bytes, or open file."""
    return device_from_dict(_read_json(source))


def device_to_dict(device: DeviceProfile) -> dict:
    return {
        "device_id": device.device_id,
        "engines": [e.value for e in Engine if e in device.engines],
        "n_cores": device.n_cores,
        "memory_capacity_mib": device.memory_capacity_mib,
        "governors": list(device.governors),
        "battery_mah": device.battery_mah,
        "os_version": device.os_version,
        "camera": dict(device.camera),
    }


def bundled_device(name: str) -> DeviceProfile:
    return load_device_profile(data_path("devices", f"{name}.json"))


# -- variant catalogs ----------------------------------------------------------

def variant_from_dict(obj: dict) -> ModelVariant:
    where = f"variant {obj.get('model_id', '?')}"
    try:
        precision = Precision(_require(obj, "precision", where))
        transform = Precision(obj.get("transform") or precision.value)
    except ValueError as exc:
        raise InputError(f"{where}: {exc}") from None
    return ModelVariant(
        model_id=str(_require(obj, "model_id", where)),
        task=parse_task(_require(obj, "task", where)),
        workload_flops=float(_require(obj, "workload_flops", where)),
        param_count=int(_require(obj, "param_count", where)),
        model_size_mib=float(_require(obj, "model_size_mib", where)),
        input_resolution=tuple(int(x) for x in _require(obj, "input_resolution", where)),
        accuracy=float(_require(obj, "accuracy", where)),
        precision=precision,
        transform=transform,
        parent_id=obj.get("parent_id"),
        name=obj.get("name", ""),
        accuracy_estimated=bool(obj.get("accuracy_estimated", False)),
    )


def variant_to_dict(v: ModelVariant) -> dict:
    out = {
        "model_id": v.model_id,
        "name": v.name,
        "task": v.task.value if hasattr(v.task, "value") else v.task,
        "workload_flops": v.workload_flops,
        "param_count": v.param_count,
        "model_size_mib": v.model_size_mib,
        "input_resolution": list(v.input_resolution),
        "accuracy": v.accuracy,
        "precision": v.precision.value,
        "parent_id": v.parent_id,
        "transform": v.transform.value,
    }
    if v.accuracy_estimated:
        out["accuracy_estimated"] = True
    return out


def load_variants(source) -> list[ModelVariant]:
    """Parse a variant catalog (JSON array) and check parent references."""
    data = _read_json(source)
    if not isinstance(data, list):
        raise InputError("variant catalog must be a JSON array")
    variants = [variant_from_dict(obj) for obj in data]
    ids = [v.model_id for v in variants]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate model_id in variant catalog")
    known = set(ids)
    for v in variants:
        if v.parent_id is not None and v.parent_id not in known:
            raise InputError(f"{v.model_id}: parent_id {v.parent_id!r} not in catalog")
    return variants


def bundled_variants() -> list[ModelVariant]:
    return load_variants(data_path("models", "table2.json"))


def with_fp16_variants(variants: Sequence[ModelVariant]) -> list[ModelVariant]:
    """Add an FP16 variant for every FP32 reference lacking one.

    FP16 accuracy is not measured; it copies the reference accuracy and is
    flagged ``accuracy_estimated``.
    """
    out = list(variants)
    have = {(v.parent_id, v.transform) for v in variants}
    for v in variants:
        if v.transform is not Precision.FP32 or (v.model_id, Precision.FP16) in have:
            continue
        base = v.model_id[:-5] if v.model_id.endswith("_fp32") else v.model_id
        out.append(replace(
            v,
            model_id=f"{base}_fp16",
            precision=Precision.FP16,
            transform=Precision.FP16,
            parent_id=v.model_id,
            model_size_mib=round(v.param_count * 2 / (1024 * 1024), 2),
            accuracy_estimated=True,
        ))
    return out


def model_family(variants: Sequence[ModelVariant], reference_id: str) -> list[ModelVariant]:
    """The reference model and every variant derived from it."""
    ids = {v.model_id for v in variants}
    if reference_id not in ids:
        raise InputError(f"reference model {reference_id!r} not in catalog")
    return [v for v in variants if v.model_id == reference_id or v.parent_id == reference_id]


# -- measurements --------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementRun:
    model_id: str
    transform: str
    engine: str
    n_threads: int
    governor: str
    run_index: int
    latency_ms: float
    peak_mem_mib: float
    fps_measured: Optional[float] = None

    @property
    def key(self) -> tuple:
        return (self.model_id, self.transform, self.engine, self.n_threads, self.governor)


class RunList(list):
    """List of retained runs plus warm-up bookkeeping."""

    def __init__(self, runs=(), warmup_dropped: int = 0, all_dropped=()):
        super().__init__(runs)
        self.warmup_dropped = warmup_dropped
        # keys whose every run fell inside the warm-up window
        self.all_dropped = set(all_dropped)


def _parse_row(row: list[str], line_no: int) -> MeasurementRun:
    if len(row) != len(CSV_HEADER):
        raise MalformedRow(line_no, f"expected {len(CSV_HEADER)} columns, got {len(row)}")
    model_id, transform, engine, threads, governor, run_index, latency, mem, fps = row
    try:
        engine = Engine.parse(engine).value
        transform = Precision(transform.strip().upper()).value
        n_threads = int(threads)
        run_index = int(run_index)
        latency_ms = float(latency)
        peak_mem = float(mem)
        fps_value = float(fps) if fps.strip() else None
    except ValueError as exc:
        raise MalformedRow(line_no, str(exc)) from None
    if not model_id or not governor:
        raise MalformedRow(line_no, "empty model_id or governor")
    if not math.isfinite(latency_ms) or latency_ms <= 0:
        raise NegativeLatency(line_no, latency_ms)
    if not peak_mem >= 0 or n_threads < 1:
        raise MalformedRow(line_no, "peak_mem_mib must be >= 0 and n_threads >= 1")
    if fps_value is not None and not fps_value > 0:
        raise MalformedRow(line_no, "fps must be > 0 when present")
    return MeasurementRun(model_id, transform, engine, n_threads, governor,
                          run_index, latency_ms, peak_mem, fps_value)


def load_measurements(source, warmup: int = DEFAULT_WARMUP) -> RunList:
    """Parse a measurement CSV, dropping the first ``warmup`` runs of each key.

    "First" is by ``run_index``; retained rows keep their file order.
    """
    if warmup < 0:
        raise InputError("warmup must be >= 0")
    reader = csv.reader(io.StringIO(_read_text(source)))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != CSV_HEADER:
        raise MalformedRow(1, "header must be " + ",".join(CSV_HEADER))
    runs = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        runs.append(_parse_row(row, line_no))

    positions = {}
    for pos, run in enumerate(runs):
        positions.setdefault(run.key, []).append((run.run_index, pos))
    dropped_pos = set()
    all_dropped = set()
    for key, order in positions.items():
        order.sort()
        dropped_pos.update(pos for _, pos in order[:warmup])
        if warmup and warmup >= len(order):
            all_dropped.add(key)
            log.warning("all %d runs of %s fall inside the %d-run warm-up", len(order), key, warmup)
    kept = [run for pos, run in enumerate(runs) if pos not in dropped_pos]
    dropped = len(dropped_pos)
    return RunList(kept, warmup_dropped=dropped, all_dropped=all_dropped)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_measurements_csv(runs: Iterable[MeasurementRun], dest) -> None:
    """Write runs using the exact ingest header; ``dest`` is a path or text file."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_measurements_csv(runs, fh)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in runs:
        writer.writerow([r.model_id, r.transform, r.engine, r.n_threads, r.governor, r.run_index,
                         _fmt(r.latency_ms), _fmt(r.peak_mem_mib),
                         "" if r.fps_measured is None else _fmt(r.fps_measured)])


# -- statistics ----------------------------------------------------------------

def nearest_rank(sorted_values: Sequence[float], n: int) -> float:
    """Nearest-rank percentile: the ceil(n/100 * N)-th smallest value (1-based)."""
    if not sorted_values:
        raise EmptyRuns("percentile of an empty sample")
    if not 1 <= n <= 100:
        raise InputError(f"percentile must be in [1, 100], got {n}")
    rank = -(-n * len(sorted_values) // 100)
    return sorted_values[max(rank, 1) - 1]


def parse_statistic(stat: str) -> str:
    """Canonical statistic name: avg, median, min, max, scalar or pNN."""
    s = str(stat).strip().lower()
    if s in ("avg", "mean", "average"):
        return "avg"
    if s in ("median", "min", "max", "scalar", "peak"):
        return "scalar" if s == "peak" else s
    if s.startswith("p") and s[1:].isdigit():
        n = int(s[1:])
        if not 1 <= n <= 99:
            raise InputError(f"percentile must be in [1, 99], got {n}")
        return f"p{n}"
    raise InputError(f"unknown statistic {stat!r}")


@dataclass(frozen=True)
class StatSummary:
    min_ms: float
    max_ms: float
    avg_ms: float
    median_ms: float
    percentiles: dict
    fps: float
    peak_mem_mib: float
    sample_count: int
    latencies: tuple = field(default=(), repr=False)
    fps_samples: tuple = field(default=(), repr=False)

    def latency(self, stat: str) -> float:
        stat = parse_statistic(stat)
        if stat == "avg":
            return self.avg_ms
        if stat in ("median", "scalar"):
            return self.median_ms
        if stat == "min":
            return self.min_ms
        if stat == "max":
            return self.max_ms
        n = int(stat[1:])
        if n in self.percentiles:
            return self.percentiles[n]
        return nearest_rank(self.latencies, n)

    def throughput(self, stat: str) -> float:
        """Frames per second under ``stat``.

        Without measured fps, throughput is the reciprocal of the matching
        latency statistic (``min`` fps pairs with ``max`` latency).  A
        percentile ``pN`` always means the throughput sustained by the
        N-th percentile service time.
        """
        stat = parse_statistic(stat)
        if stat in ("median", "scalar"):
            return self.fps
        if self.fps_samples:
            if stat == "avg":
                return math.fsum(self.fps_samples) / len(self.fps_samples)
            if stat == "min":
                return self.fps_samples[0]
            if stat == "max":
                return self.fps_samples[-1]
            return nearest_rank(self.fps_samples, 100 - int(stat[1:]))
        if stat == "min":
            return 1000.0 / self.max_ms
        if stat == "max":
            return 1000.0 / self.min_ms
        return 1000.0 / self.latency(stat)

    def scaled(self, factor: float) -> "StatSummary":
        """Summary with every latency multiplied and throughput divided by ``factor``."""
        if factor == 1.0:
            return self
        return StatSummary(
            min_ms=self.min_ms * factor,
            max_ms=self.max_ms * factor,
            avg_ms=self.avg_ms * factor,
            median_ms=self.median_ms * factor,
            percentiles={n: v * factor for n, v in self.percentiles.items()},
            fps=self.fps / factor,
            peak_mem_mib=self.peak_mem_mib,
            sample_count=self.sample_count,
            latencies=tuple(x * factor for x in self.latencies),
            fps_samples=tuple(x / factor for x in self.fps_samples),
        )


def summarize(latencies: Sequence[float], peak_mems: Sequence[float],
              fps_values: Sequence[float] = (), percentiles: Iterable[int] = DEFAULT_PERCENTILES) -> StatSummary:
    if not latencies:
        raise EmptyRuns("cannot summarise zero runs")
    lat = tuple(sorted(latencies))
    fps_sorted = tuple(sorted(fps_values))
    median = nearest_rank(lat, 50)
    return StatSummary(
        min_ms=lat[0],
        max_ms=lat[-1],
        avg_ms=math.fsum(lat) / len(lat),
        median_ms=median,
        percentiles={n: nearest_rank(lat, n) for n in sorted(set(percentiles))},
        fps=nearest_rank(fps_sorted, 50) if fps_sorted else 1000.0 / median,
        peak_mem_mib=max(peak_mems),
        sample_count=len(lat),
        latencies=lat,
        fps_samples=fps_sorted,
    )


@dataclass(frozen=True)
class LookupTable:
    entries: dict
    device_id: str = ""
    warmup_dropped: int = 0
    sample_count: int = 0

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, key) -> StatSummary:
        if isinstance(key, Design):
            key = key.table_key
        try:
            return self.entries[key]
        except KeyError:
            raise MissingEntry(key) from None

    def keys(self):
        return self.entries.keys()

    def scaled_by_engine(self, factors: dict) -> "LookupTable":
        """Copy with each entry's latency scaled by its engine's factor.

        Memory and accuracy are untouched; throughput is divided.
        """
        factors = {Engine.parse(e).value: f for e, f in factors.items()}
        entries = {k: s.scaled(factors.get(k[2], 1.0)) for k, s in self.entries.items()}
        return replace(self, entries=entries)

    def unresolved_keys(self, variants: Sequence[ModelVariant], device: DeviceProfile) -> list:
        """Keys that name an unknown variant or a config the device cannot run."""
        known = {(v.model_id, v.transform.value) for v in variants}
        bad = []
        for key in self.entries:
            model_id, transform, engine, threads, governor = key
            ok = (
                (model_id, transform) in known
                and Engine.parse(engine) in device.engines
                and 1 <= threads <= device.n_cores
                and (engine == "CPU" or threads == 1)
                and governor in device.governors
            )
            if not ok:
                bad.append(key)
        return bad

    def provenance(self) -> dict:
        return {"device_id": self.device_id, "warmup_dropped": self.warmup_dropped,
                "sample_count": self.sample_count, "entries": len(self.entries)}


def build_lookup(
    runs: Sequence[MeasurementRun],
    requested_percentiles: Iterable[int] = DEFAULT_PERCENTILES,
    device_id: str = "",
    warmup_dropped: Optional[int] = None,
) -> LookupTable:
    """Aggregate runs into one :class:`StatSummary` per design key."""
    if not runs:
        raise EmptyRuns("no measurement runs to aggregate")
    requested = sorted(set(int(n) for n in requested_percentiles))
    for n in requested:
        if not 1 <= n <= 99:
            raise InputError(f"percentile must be in [1, 99], got {n}")
    grouped = {}
    for run in runs:
        lat, mem, fps = grouped.setdefault(run.key, ([], [], []))
        lat.append(run.latency_ms)
        mem.append(run.peak_mem_mib)
        if run.fps_measured is not None:
            fps.append(run.fps_measured)
    entries = {key: summarize(lat, mem, fps, requested) for key, (lat, mem, fps) in grouped.items()}
    if warmup_dropped is None:
        warmup_dropped = getattr(runs, "warmup_dropped", 0)
    return LookupTable(
        entries=entries,
        device_id=device_id,
        warmup_dropped=warmup_dropped,
        sample_count=min(s.sample_count for s in entries.values()),
    )


def load_lookup(source, warmup: int = DEFAULT_WARMUP, device_id: str = "",
                percentiles: Iterable[int] = DEFAULT_PERCENTILES) -> LookupTable:
    return build_lookup(load_measurements(source, warmup), percentiles, device_id=device_id)


def bundled_lookup(name: str = "a71_synthetic", warmup: int = DEFAULT_WARMUP) -> LookupTable:
    return load_lookup(data_path("measurements", f"{name}.csv"), warmup, device_id=name.split("_")[0])


# -- synthetic measurements ----------------------------------------------------

def expand_generator_config(config: dict) -> list[dict]:
    """Flatten a generator config into one dict per design key.

    Two forms are accepted and may be combined: an explicit ``entries``
    list, and a ``grid`` giving per-model engine latencies that is expanded
    over governors and CPU thread counts.
    """
    default_jitter = float(config.get("jitter", 0.0))
    out = []
    for i, e in enumerate(config.get("entries", [])):
        where = f"entries[{i}]"
        out.append({
            "model_id": str(_require(e, "model_id", where)),
            "transform": Precision(str(_require(e, "transform", where)).upper()).value,
            "engine": Engine.parse(_require(e, "engine", where)).value,
            "n_threads": int(e.get("n_threads", 1)),
            "governor": str(_require(e, "governor", where)),
            "base_latency_ms": float(_require(e, "base_latency_ms", where)),
            "jitter": float(e.get("jitter", default_jitter)),
            "peak_mem_mib": float(_require(e, "peak_mem_mib", where)),
        })
    grid = config.get("grid")
    if grid:
        governors = _require(grid, "governors", "grid")
        thread_scale = list(_require(grid, "cpu_thread_scale", "grid"))
        thread_mem = float(grid.get("cpu_thread_mem_mib", 0.0))
        for model_id, spec in _require(grid, "models", "grid").items():
            transform = Precision(str(_require(spec, "transform", model_id)).upper()).value
            latency = _require(spec, "latency_ms", model_id)
            memory = _require(spec, "peak_mem_mib", model_id)
            for engine_name, base in latency.items():
                engine = Engine.parse(engine_name).value
                threads = range(1, len(thread_scale) + 1) if engine == "CPU" else (1,)
                for t in threads:
                    scale = thread_scale[t - 1] if engine == "CPU" else 1.0
                    mem = float(memory[engine_name]) + (thread_mem * (t - 1) if engine == "CPU" else 0.0)
                    for governor, g_scale in governors.items():
                        out.append({
                            "model_id": model_id, "transform": transform, "engine": engine,
                            "n_threads": t, "governor": governor,
                            "base_latency_ms": round(base * scale * g_scale, 4),
                            "jitter": float(spec.get("jitter", default_jitter)),
                            "peak_mem_mib": round(mem, 2),
                        })
    for e in out:
        if e["base_latency_ms"] <= 0 or not 0 <= e["jitter"] < 1:
            raise InputError(f"invalid generator entry for {e['model_id']}: "
                             "base_latency_ms must be > 0 and jitter in [0, 1)")
    return sorted(out, key=lambda e: (e["model_id"], e["engine"], e["n_threads"], e["governor"]))


def gen_measurements(config: dict, seed: int, runs: Optional[int] = None) -> list[MeasurementRun]:
    """Deterministic synthetic runs: ``base * (1 + U(-jitter, +jitter))`` per run.

    Latencies are rounded to 4 decimals so a CSV round trip is exact.
    """
    n_runs = int(runs if runs is not None else config.get("runs", 200))
    if n_runs < 1:
        raise InputError("runs must be >= 1")
    rng = random.Random(seed)
    out = []
    for e in expand_generator_config(config):
        base, jitter = e["base_latency_ms"], e["jitter"]
        for i in range(n_runs):
            noise = rng.uniform(-jitter, jitter) if jitter else 0.0
            out.append(MeasurementRun(
                e["model_id"], e["transform"], e["engine"], e["n_threads"], e["governor"],
                i, round(base * (1.0 + noise), 4), e["peak_mem_mib"], None,
            ))
    return out
