"""Small builders shared by the test modules."""

from dployopt.core import DeviceProfile, Engine, ModelVariant, Precision, Task
from dployopt.ingest import MeasurementRun, build_lookup


def variant(model_id="m_fp32", accuracy=0.7, params=1_000_000, precision=Precision.FP32, parent=None,
            resolution=(224, 224, 3)):
    return ModelVariant(
        model_id=model_id,
        task=Task.CLASSIFICATION,
        workload_flops=1e9,
        param_count=params,
        model_size_mib=params * precision.bytes_per_param / 2**20,
        input_resolution=resolution,
        accuracy=accuracy,
        precision=precision,
        transform=precision,
        parent_id=parent,
    )


def device(engines=("CPU",), n_cores=1, governors=("schedutil",), device_id="dev"):
    return DeviceProfile(
        device_id=device_id,
        engines=frozenset(Engine(e) for e in engines),
        n_cores=n_cores,
        memory_capacity_mib=4096,
        governors=tuple(governors),
    )


def table_from(samples, mem=None, fps=None):
    """``samples`` maps a table key to a list of latencies (ms)."""
    runs = []
    for key, lats in samples.items():
        model_id, transform, engine, threads, governor = key
        for i, lat in enumerate(lats):
            f = None if fps is None or key not in fps else fps[key][i]
            m = 10.0 if mem is None else mem.get(key, 10.0)
            runs.append(MeasurementRun(model_id, transform, engine, threads, governor, i, lat, m, f))
    return build_lookup(runs)


def key(model_id, engine="CPU", threads=1, governor="schedutil", transform="FP32"):
    return (model_id, transform, engine, threads, governor)


def scenario_setup(name):
    """Initial design and search inputs for a bundled scenario, as the CLI builds them."""
    from dployopt.devicesim import bundled_scenario
    from dployopt.ingest import bundled_device, bundled_lookup, bundled_variants, model_family
    from dployopt.moo import preset
    from dployopt.optimizer import optimize

    scenario = bundled_scenario(name)
    ctx = scenario.context
    device = bundled_device(ctx["device"])
    variants = model_family(bundled_variants(), ctx["reference"])
    table = bundled_lookup(ctx.get("measurements", "a71_synthetic"))
    ref = next(v for v in variants if v.model_id == ctx["reference"])
    problem = preset(ctx["use_case"], ctx["epsilon"]).with_reference(ref.accuracy)
    r_grid = ctx.get("r_grid", [1.0])
    initial = optimize(variants, device, table, problem, r_grid, top_k=1).best
    return initial, problem, variants, device, table, scenario, r_grid
