"""Command-line entry point: characterize, simulate, sweep, compare, microbench."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import baselines, dse, emu, zoo
from .arch import ConfigError, MachineConfig, apply_overrides, load_config, preset
from .mapping import select_matmul_tiling
from .perf import BATCH_POLICIES, SimOptions, simulate, simulate_batch
from .powerarea import CoefficientError, estimate_power, load_coefficients
from .workload import DataType, Trace, TraceError, characterize, load_trace, with_dtype

CONFIG_FIELDS = frozenset(f.name for f in fields(MachineConfig))

EXIT_OK = 0
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_INFEASIBLE = 5


class UsageError(ValueError):
    """Arguments that parse but do not make sense together."""


# ---------------------------------------------------------------- helpers

def resolve_trace(spec: str, batch: int | None = None, dtype: str | None = None) -> Trace:
    """A trace file path, or a zoo name ``model`` / ``model:mode``."""
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        trace = load_trace(path)
        if batch is not None and batch != trace.batch:
            raise UsageError(f"{spec} is fixed at batch {trace.batch}; use a zoo name "
                             f"(e.g. {trace.model or 'resnet50'}:{trace.mode}) to rebatch")
        return with_dtype(trace, dtype) if dtype else trace
    model, _, mode = spec.partition(":")
    if model not in zoo.MODELS:
        raise FileNotFoundError(f"no trace file or zoo model named {spec!r}")
    return zoo.build(model, mode or "inference", batch or 1,
                     DataType.parse(dtype) if dtype else None)


def _zoo_builder(spec: str, dtype: str | None):
    model, _, mode = spec.partition(":")
    if Path(spec).exists() or model not in zoo.MODELS:
        return None
    dt = DataType.parse(dtype) if dtype else None
    return lambda s: zoo.build(model, mode or "inference", s, dt)


def build_config(args: argparse.Namespace) -> MachineConfig:
    cfg = load_config(args.config) if args.config else preset(args.preset)
    overrides: dict[str, Any] = {
        "tiles": args.tiles, "simd_bits": args.simd_bits, "freq_hz": args.freq,
        "llc_bytes": args.llc_bytes, "mem_bw_bytes_per_s": args.mem_bw,
        "barrier_cycles": args.barrier_cycles,
    }
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        if key.strip() not in CONFIG_FIELDS:
            raise UsageError(f"--set: unknown config field {key.strip()!r}")
        overrides[key.strip()] = value.strip()
    out = apply_overrides(cfg, overrides)
    return out if out == cfg else replace(out, name=dse.config_label(out))


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        if v == 0 or math.isinf(v) or math.isnan(v):
            return str(v)
        return f"{v:.4g}" if abs(v) < 1e5 else f"{v:.4e}"
    return str(v)


def print_table(rows: Sequence[dict[str, Any]], out=None) -> None:
    out = out or sys.stdout
    if not rows:
        print("(no rows)", file=out)
        return
    cols = list(dict.fromkeys(k for r in rows for k in r))
    cells = [[_fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)), file=out)
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)), file=out)


def write_csv(rows: Sequence[dict[str, Any]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        cols = list(dict.fromkeys(k for r in rows for k in r))
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        w.writerows(rows)


def write_json(doc: Any, path: str) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, default=_json_default) + "\n")


def _json_default(o: Any) -> Any:
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if hasattr(o, "__dict__"):
        return o.__dict__
    return str(o)


# ---------------------------------------------------------------- commands

def cmd_characterize(args: argparse.Namespace) -> int:
    published = baselines.table()["gops_per_sample"]
    shapes = baselines.table()["shapes"]
    rows = []
    for spec in args.traces:
        s = characterize(resolve_trace(spec, args.batch, args.dtype))
        row = s.as_row()
        row["published_gops"] = published.get(s.name, "")
        row["published_shapes"] = shapes.get(s.name, "")
        rows.append(row)
    print_table(rows)
    if args.csv:
        write_csv(rows, args.csv)
    if args.json:
        write_json(rows, args.json)
    return EXIT_OK


def run_simulation(args: argparse.Namespace) -> tuple[Trace, Any, Any, MachineConfig]:
    cfg = build_config(args)
    options = SimOptions(warm=not args.cold, fuse=not args.no_fuse, shrink=not args.no_shrink,
                         perfect_cache=args.perfect_cache)
    batch = args.batch
    builder = _zoo_builder(args.trace, args.dtype)
    if batch and batch > 1 and builder is not None and args.batch_policy != "full":
        trace = builder(1)
        run = simulate_batch(builder, batch, cfg, options, policy=args.batch_policy)
    else:
        trace = resolve_trace(args.trace, batch, args.dtype)
        run = simulate(trace, cfg, options)
    power = estimate_power(cfg, run, load_coefficients(args.coefficients))
    return trace, run, power, cfg


def cmd_simulate(args: argparse.Namespace) -> int:
    trace, run, power, cfg = run_simulation(args)
    summary = run.summary()
    summary.pop("time_by_kind")
    rows = [{"metric": k, "value": v} for k, v in summary.items()]
    rows += [{"metric": k, "value": v} for k, v in power.summary().items()
             if k not in ("energy_j", "config", "total_time_s", "achieved_ops")]
    rows += [{"metric": f"energy_{k}_j", "value": v} for k, v in power.energy_j.items()]
    rows.append({"metric": "gops_per_sample", "value": run.total_ops / run.batch / 1e9})
    print_table(rows)
    if args.per_op:
        print()
        print_table([{"kind": e.kind, "shape": e.shape, "time_us": e.operator_time_s * 1e6,
                      "util": e.utilization, "bound": e.bound, "chunks": e.chunk_count}
                     for e in run.operators])
    if args.csv:
        write_csv([e.row() | {"node_ids": " ".join(e.node_ids)} for e in run.operators], args.csv)
    if args.json:
        write_json({"config": cfg.to_dict(), "run": run.summary(), "power": power.summary(),
                    "gops_per_sample": run.total_ops / run.batch / 1e9,
                    "operators": [e.row() for e in run.operators]}, args.json)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = dse.load_manifest(args.manifest) if args.manifest else dse.SweepSpec()
    if args.batch:
        spec = replace(spec, batch=args.batch)
    t0 = time.time()
    points = dse.sweep(spec, workers=args.workers, coeffs=load_coefficients(args.coefficients))
    front = {id(p) for p in dse.pareto([p for p in points if p.feasible])}
    rows = []
    for p in points:
        row = {"config": p.label, "feasible": p.feasible}
        if p.feasible:
            row.update({m: p.geomean(m) for m in dse.METRICS})
            row["pareto"] = id(p) in front
        else:
            row["error"] = p.error
        rows.append(row)
    print_table(rows)
    feasible = [p for p in points if p.feasible]
    base = preset(spec.base)
    try:
        bp = dse.find_point(feasible, tiles=base.tiles, simd_bits=base.simd_bits,
                            freq_hz=base.freq_hz)
        gap, _ = dse.optimum_gap(feasible, bp)
        print(f"\n{bp.label}: geomean pJ/op {bp.geomean('pj_per_op'):.4g}, "
              f"{100 * (gap - 1):.1f}% above the per-app grid optimum")
    except KeyError:
        pass
    print(f"{len(points)} points in {time.time() - t0:.1f} s")
    if args.csv:
        write_csv(rows, args.csv)
    if args.trace_csv:
        dse.write_csv(points, args.trace_csv)
    if args.json:
        write_json([{"config": p.label, "overrides": p.overrides, "per_trace": p.per_trace,
                     "error": p.error} for p in points], args.json)
    return EXIT_OK


def _load_result(path: str) -> baselines.AppResult:
    doc = json.loads(Path(path).read_text())
    try:
        run, power = doc["run"], doc["power"]
        return baselines.AppResult(run["trace"], int(run["batch"]), float(run["samples_per_s"]),
                                   float(power["pj_per_op"]), float(doc["gops_per_sample"]))
    except (KeyError, TypeError) as e:
        raise TraceError(f"{path}: not a simulate --json report ({e})") from None


def cmd_compare(args: argparse.Namespace) -> int:
    results = [_load_result(p) for p in args.runs]
    if args.reference:
        rep = baselines.compare_runs(results, [_load_result(p) for p in args.reference])
    elif args.baseline == "a100":
        rep = baselines.compare_a100(results)
    else:
        raise UsageError(f"unknown baseline {args.baseline!r}")
    print_table(rep.rows)
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    gm = rep.geomeans()
    if gm:
        print()
        print_table([{"group": k, "geomean": v} for k, v in gm.items()])
    if rep.baseline == "a100":
        print(f"\n{rep.footer}")
    if args.csv:
        write_csv(rep.rows, args.csv)
    if args.json:
        write_json({"rows": rep.rows, "geomeans": gm, "warnings": rep.warnings}, args.json)
    return EXIT_OK


def random_operands(rng: np.random.Generator, shape: tuple[int, int, int], dtype: DataType):
    M, N, K = shape
    if dtype is DataType.Int8:
        return (rng.integers(-128, 128, (M, K), dtype=np.int8),
                rng.integers(-128, 128, (K, N), dtype=np.int8))
    return (rng.standard_normal((M, K)).astype(np.float16),
            rng.standard_normal((K, N)).astype(np.float16))


def check_emulation(rng: np.random.Generator, shape: tuple[int, int, int], dtype: DataType,
                    cfg: MachineConfig, rel_tol: float = 1e-3) -> tuple[bool, float]:
    """Emulate one random MatMul; Int8 must match bit-exactly, FP16 within ``rel_tol``."""
    A, B = random_operands(rng, shape, dtype)
    run = emu.run_matmul(A, B, cfg, dtype, requantize=False)
    ref = emu.reference_matmul(A, B, dtype)
    if dtype is DataType.Int8:
        return bool(np.array_equal(run.output, ref)), 0.0
    scale = max(float(np.max(np.abs(ref))), 1e-30)
    err = float(np.max(np.abs(run.output.astype(np.float64) - ref))) / scale
    return err <= rel_tol, err


def cmd_microbench(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    dtype = DataType.parse(args.dtype or "Int8")
    if args.shape:
        M, N, K = args.shape
        mk = select_matmul_tiling(M, N, K, cfg, dtype)
        kern = emu.emit_matmul_kernel(mk, (M, N, K), dtype, cfg)
        census = kern.census()
        rows = [{"field": k, "value": v} for k, v in (
            ("vectorized_dim", mk.vectorized_dim), ("tm", mk.tm), ("tn", mk.tn), ("tk", mk.tk),
            ("registers", mk.regs_used), ("loads_per_kstep", mk.loads_per_kstep),
            ("fmas_per_kstep", mk.fmas_per_kstep), ("chunks", kern.chunks))]
        rows += [{"field": f"census_{k}", "value": v} for k, v in sorted(census.items())]
        print_table(rows)
        return EXIT_OK
    rng = np.random.default_rng(args.seed)
    t0 = time.time()
    failures = 0
    worst = 0.0
    for _ in range(args.count):
        shape = tuple(int(x) for x in rng.integers(1, args.max_dim + 1, 3))
        ok, err = check_emulation(rng, shape, dtype, cfg)
        failures += not ok
        worst = max(worst, err)
    elapsed = time.time() - t0
    print_table([{"dtype": dtype.label, "cases": args.count, "failures": failures,
                  "max_rel_err": worst, "seconds": elapsed}])
    return EXIT_OK if failures == 0 else EXIT_VALIDATION


# ---------------------------------------------------------------- parser

def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("machine")
    g.add_argument("--preset", default="base", help="base or riss (default: base)")
    g.add_argument("--config", help="JSON machine config (overrides --preset)")
    g.add_argument("--tiles", type=int)
    g.add_argument("--simd-bits", type=int)
    g.add_argument("--freq", type=float, help="clock in Hz")
    g.add_argument("--llc-bytes", type=int)
    g.add_argument("--mem-bw", help="bytes/s, or 'inf'")
    g.add_argument("--barrier-cycles", type=int)
    g.add_argument("--set", action="append", metavar="FIELD=VALUE",
                   help="override any MachineConfig field (repeatable)")


def _output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", help="write rows as CSV")
    p.add_argument("--json", help="write structured output as JSON")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="upcycle", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize", help="op counts and shape census of traces")
    p.add_argument("traces", nargs="+", help="trace JSON files or zoo names (model[:mode])")
    p.add_argument("--batch", type=int)
    p.add_argument("--dtype")
    _output_flags(p)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("simulate", help="end-to-end time, utilization and power")
    p.add_argument("trace", help="trace JSON file or zoo name (model[:mode])")
    p.add_argument("--batch", type=int)
    p.add_argument("--dtype")
    p.add_argument("--batch-policy", choices=BATCH_POLICIES, default="best",
                   help="how a zoo trace at batch > 1 is split into passes")
    p.add_argument("--cold", action="store_true", help="start with an empty LLC")
    p.add_argument("--no-fuse", action="store_true", help="run element-wise ops separately")
    p.add_argument("--no-shrink", action="store_true",
                   help="register-maximal tiles instead of occupancy-aware sizing")
    p.add_argument("--perfect-cache", action="store_true")
    p.add_argument("--per-op", action="store_true", help="print per-operator rows")
    p.add_argument("--coefficients", help="power/area coefficient JSON")
    _config_flags(p)
    _output_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid sweep of machine configurations")
    p.add_argument("manifest", nargs="?", help="sweep manifest JSON (default grid if omitted)")
    p.add_argument("--batch", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--coefficients")
    p.add_argument("--trace-csv", help="write one row per (config, trace) with Pareto flags")
    _output_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="speedup and efficiency against a baseline")
    p.add_argument("runs", nargs="+", help="simulate --json reports")
    p.add_argument("--baseline", default="a100")
    p.add_argument("--reference", nargs="+", help="compare against these reports instead")
    _output_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("microbench", help="emulate random MatMul kernels against a reference")
    p.add_argument("--dtype")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--max-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=int, nargs=3, metavar=("M", "N", "K"),
                   help="show the tiling and instruction census for one shape")
    _config_flags(p)
    p.set_defaults(func=cmd_microbench)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: infeasible configuration: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (TraceError, CoefficientError, UsageError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
