"""Command-line interface.

    dployopt optimize --device a71 --measurements runs.csv --use-case target-latency --target-latency 100
    dployopt simulate --scenario fig6_load --compare
    dployopt gen-measurements --spec spec.json --seed 0 --runs 200 --out runs.csv

Device, catalog, measurement and scenario arguments accept a file path or
the name of a bundled file (``a71``, ``table2``, ``a71_synthetic``,
``fig6_load``).  Errors go to stderr as ``ERROR <code>: <detail>``; exit
status is 0 on success, 2 when no design is feasible, 1 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import ingest, moo
from .core import DEFAULT_R_GRID
from .devicesim import load_scenario, run_scenario
from .errors import DployoptError, InputError, NoFeasibleDesign
from .optimizer import DEFAULT_TOP_K, explain, optimize
from .runtime import ManagerConfig, run_managed

log = logging.getLogger("dployopt")

SEED_ENV = "DPLOYOPT_SEED"
ROW_FIELDS = ["rank", "model_id", "transform", "engine", "n_threads", "governor", "r", "score", "feasible"]


class UsageError(DployoptError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- argument plumbing -----------------------------------------------------------

def _bundled(arg: str, folder: str, suffix: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    candidate = ingest.data_path(folder, f"{arg}{suffix}")
    if candidate.exists():
        return candidate
    raise InputError(f"no such file: {arg}")


def _r_grid(text: str) -> list:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--r-grid must be comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError("--r-grid must not be empty")
    return values


def _seed(args, default: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return default if args.seed is None else args.seed


def _add_problem_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--device", required=required, help="device profile JSON or bundled name")
    p.add_argument("--models", default=None, help="variant catalog JSON (default: bundled table2)")
    p.add_argument("--measurements", default=None, help="measurement CSV or bundled name")
    p.add_argument("--use-case", choices=["maxfps", "target-latency", "maxacc-maxfps", "custom"],
                   required=required)
    p.add_argument("--epsilon", type=float, help="max accuracy drop (maxfps)")
    p.add_argument("--target-latency", type=float, help="latency bound in ms (target-latency)")
    p.add_argument("--w-fps", type=float, help="fps weight (maxacc-maxfps)")
    p.add_argument("--stat", default=None, help="avg, median, min, max or pNN")
    p.add_argument("--problem", help="problem JSON (custom)")
    p.add_argument("--reference", help="restrict the search to this reference model and its variants")
    p.add_argument("--reference-accuracy", type=float)
    p.add_argument("--add-fp16", action="store_true", help="add estimated FP16 variants of FP32 models")
    p.add_argument("--r-grid", type=_r_grid, default=None, help="comma-separated recognition rates")
    p.add_argument("--warmup", type=int, default=ingest.DEFAULT_WARMUP)
    p.add_argument("--skip-missing", action="store_true", help="skip designs without lookup entries")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dployopt", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="search for the best deployment design")
    _add_problem_args(p)
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.add_argument("--format", choices=["json", "csv", "table"], default="json")
    p.add_argument("--out", help="result file (default: stdout)")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("simulate", help="run a load / thermal scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON or bundled name")
    _add_problem_args(p, required=False)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--managed", dest="mode", action="store_const", const="managed")
    mode.add_argument("--static", dest="mode", action="store_const", const="static")
    mode.add_argument("--compare", dest="mode", action="store_const", const="compare")
    p.set_defaults(mode="managed")
    p.add_argument("--out-trace", help="SimTrace CSV")
    p.add_argument("--out-log", help="ManagerLog JSON lines")
    p.add_argument("--out", help="summary JSON (default: stdout)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--window-size", type=int, default=ManagerConfig.window_size)
    p.add_argument("--trigger-threshold", type=float, default=ManagerConfig.trigger_threshold)
    p.add_argument("--confirm-windows", type=int, default=ManagerConfig.confirm_windows)
    p.add_argument("--switch-margin", type=float, default=ManagerConfig.switch_margin)

    p = sub.add_parser("gen-measurements", help="write a synthetic measurement CSV")
    p.add_argument("--spec", required=True, help="generator config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out", required=True)
    return parser


# -- shared setup ----------------------------------------------------------------

def _problem(args, variants):
    use_case = args.use_case
    if use_case == "custom":
        if not args.problem:
            raise UsageError("--use-case custom requires --problem")
        problem = moo.problem_from_dict(ingest._read_json(args.problem))
    elif use_case == "maxfps":
        if args.epsilon is None:
            raise UsageError("--use-case maxfps requires --epsilon")
        problem = moo.preset(use_case, args.epsilon, args.stat)
    elif use_case == "target-latency":
        if args.target_latency is None:
            raise UsageError("--use-case target-latency requires --target-latency")
        problem = moo.preset(use_case, args.target_latency, args.stat)
    else:
        if args.w_fps is None:
            raise UsageError("--use-case maxacc-maxfps requires --w-fps")
        problem = moo.preset(use_case, args.w_fps, args.stat)

    if args.reference_accuracy is not None:
        problem = problem.with_reference(args.reference_accuracy)
    elif problem.reference_accuracy is None:
        if args.reference:
            ref = next(v for v in variants if v.model_id == args.reference)
            problem = problem.with_reference(ref.accuracy)
        else:
            problem = problem.with_reference(max(v.accuracy for v in variants))
    return problem


def _setup(args):
    device = ingest.load_device_profile(_bundled(args.device, "devices", ".json"))
    variants = ingest.load_variants(_bundled(args.models or "table2", "models", ".json"))
    if args.add_fp16:
        variants = ingest.with_fp16_variants(variants)
    if args.reference:
        variants = ingest.model_family(variants, args.reference)
    if not args.measurements:
        raise UsageError("--measurements is required")
    runs = ingest.load_measurements(_bundled(args.measurements, "measurements", ".csv"), args.warmup)
    if not runs:
        raise InputError("no measurement runs left after warm-up trimming")
    table = ingest.build_lookup(runs, device_id=device.device_id)
    problem = _problem(args, variants)
    return device, variants, table, problem


def _write(text: str, dest) -> None:
    if dest:
        Path(dest).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- commands --------------------------------------------------------------------

def result_document(result, table) -> dict:
    report = explain(result, table)
    report["provenance"] = table.provenance()
    report["problem"] = moo.problem_to_dict(result.problem)
    return report


def _render(doc: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    if fmt == "csv":
        writer = csv.DictWriter(buf, fieldnames=ROW_FIELDS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(doc["ranked"])
        return buf.getvalue()
    buf.write(f"feasible {doc['feasible_count']} / evaluated {doc['evaluated_count']}\n")
    for row in doc["ranked"]:
        buf.write(f"{row['rank']:>3}  {row['model_id']:<24} {row['engine']:<5} x{row['n_threads']:<2} "
                  f"{row['governor']:<12} r={row['r']:<5g} score={row['score']:.6f}\n")
    for constraint, count in doc["infeasibility_report"].items():
        buf.write(f"violated {constraint}: {count}\n")
    return buf.getvalue()


def cmd_optimize(args) -> int:
    device, variants, table, problem = _setup(args)
    r_grid = args.r_grid or list(DEFAULT_R_GRID)
    try:
        result = optimize(variants, device, table, problem, r_grid, args.top_k, args.skip_missing)
    except NoFeasibleDesign as exc:
        _write(_render(result_document(exc.result, table), args.format), args.out)
        raise
    _write(_render(result_document(result, table), args.format), args.out)
    return 0


def _merge_context(args, scenario) -> None:
    ctx = scenario.context
    for name in ("device", "measurements", "reference", "use_case", "epsilon", "target_latency", "w_fps",
                 "stat", "r_grid"):
        if getattr(args, name, None) is None and name in ctx:
            setattr(args, name, ctx[name])
    if args.measurements is None and args.device == "a71" and "measurements" not in ctx:
        args.measurements = "a71_synthetic"
    if args.device is None or args.use_case is None:
        raise UsageError("--device and --use-case are required (directly or via the scenario context)")


def cmd_simulate(args) -> int:
    scenario = load_scenario(_bundled(args.scenario, "scenarios", ".json"))
    _merge_context(args, scenario)
    scenario.seed = _seed(args, scenario.seed)
    device, variants, table, problem = _setup(args)
    r_grid = args.r_grid or [1.0]
    initial = optimize(variants, device, table, problem, r_grid, top_k=1, skip_missing=args.skip_missing).best
    config = ManagerConfig(window_size=args.window_size, trigger_threshold=args.trigger_threshold,
                           confirm_windows=args.confirm_windows, switch_margin=args.switch_margin)

    summary = {"scenario": str(args.scenario), "seed": scenario.seed, "initial_design": initial.as_row()}
    managed = static = None
    if args.mode in ("managed", "compare"):
        managed, manager = run_managed(initial, problem, variants, device, table, scenario, config, r_grid)
        summary["managed"] = managed.summary()
        summary["managed"]["switch_steps"] = [s.step for s in managed.switches]
        if args.out_log:
            manager.write_log(args.out_log)
    if args.mode in ("static", "compare"):
        static = run_scenario(initial, table, scenario)
        summary["static"] = static.summary()
    if managed and static:
        summary["speedup_mean_latency"] = (summary["static"]["mean_latency_ms"]
                                           / summary["managed"]["mean_latency_ms"])
    if args.out_trace:
        (managed or static).write_csv(args.out_trace)
        if managed and static:
            out = Path(args.out_trace)
            static.write_csv(out.with_name(out.stem + ".static" + out.suffix))
    if args.out_log and managed is None:
        Path(args.out_log).write_text("", encoding="utf-8")
    _write(json.dumps(summary, indent=2) + "\n", args.out)
    return 0


def cmd_gen_measurements(args) -> int:
    config = ingest._read_json(args.spec)
    if not isinstance(config, dict):
        raise InputError("generator spec must be a JSON object")
    runs = ingest.gen_measurements(config, _seed(args, 0), args.runs)
    ingest.write_measurements_csv(runs, args.out)
    return 0


COMMANDS = {"optimize": cmd_optimize, "simulate": cmd_simulate, "gen-measurements": cmd_gen_measurements}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except NoFeasibleDesign as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 2
    except DployoptError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR IOError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
