"""Design-space sweeps: grid over machine configurations, efficiency metrics, Pareto fronts."""

from __future__ import annotations

import csv
import functools
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import zoo
from .arch import ConfigError, MachineConfig, apply_overrides, preset
from .perf import RunReport, SimOptions, simulate, simulate_batch
from .powerarea import CoefficientError, EnergyCoefficients, estimate_power, load_coefficients
from .workload import Trace

METRICS = ("pj_per_op", "tops_per_mm2", "samples_per_s", "utilization")
MANIFEST_VERSION = 1
# Lower is better for these; everything else is maximized.
_MINIMIZE = {"pj_per_op"}

# Applications evaluated in the sweeps and headroom studies.
SUITE = (("resnet50", "inference"), ("ssd_resnet34", "inference"),
         ("bert_large_128", "inference"), ("rnnt", "inference"),
         ("resnet50", "training"), ("ssd_resnet34", "training"),
         ("bert_large_128", "training"), ("rnnt", "training"))
LARGE_BATCH = 64


def geomean(values: Iterable[float]) -> float:
    vals = [v for v in values if v > 0 and math.isfinite(v)]
    if not vals:
        return math.nan
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


@dataclass(frozen=True)
class SweepSpec:
    tiles: tuple[int, ...] = (1024, 2048, 4096)
    simd_bits: tuple[int, ...] = (256, 512)
    freq_hz: tuple[float, ...] = (1.0e9, 1.5e9, 2.0e9, 2.5e9)
    llc_bytes: tuple[int, ...] = (32 * 1024 * 1024,)
    mem_bw: tuple[float, ...] = (900e9,)
    traces: tuple[tuple[str, str], ...] = SUITE
    batch: int = LARGE_BATCH
    metrics: tuple[str, ...] = METRICS
    base: str = "base"

    def __post_init__(self):
        axes = (self.tiles, self.simd_bits, self.freq_hz, self.llc_bytes, self.mem_bw, self.traces)
        if any(len(a) == 0 for a in axes):
            raise ValueError("every sweep axis needs at least one value")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")

    def configs(self) -> list[dict[str, Any]]:
        """Override sets in deterministic axis order."""
        return [dict(tiles=t, simd_bits=s, freq_hz=f, llc_bytes=l, mem_bw_bytes_per_s=b)
                for t, s, f, l, b in itertools.product(self.tiles, self.simd_bits, self.freq_hz,
                                                       self.llc_bytes, self.mem_bw)]

    @property
    def size(self) -> int:
        return (len(self.tiles) * len(self.simd_bits) * len(self.freq_hz) * len(self.llc_bytes)
                * len(self.mem_bw))


def config_label(cfg: MachineConfig) -> str:
    return f"{cfg.tiles}c/{cfg.simd_bits}v@{cfg.freq_hz / 1e9:g}GHz"


def load_manifest(path: str | Path) -> SweepSpec:
    doc = json.loads(Path(path).read_text())
    version = doc.pop("version", MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {version}")
    kw: dict[str, Any] = {}
    for key in ("tiles", "simd_bits", "freq_hz", "llc_bytes", "mem_bw", "metrics"):
        if key in doc:
            kw[key] = tuple(doc[key])
    if "traces" in doc:
        kw["traces"] = tuple((m, mode) for m, mode in doc["traces"])
    for key in ("batch", "base"):
        if key in doc:
            kw[key] = doc[key]
    return SweepSpec(**kw)


@dataclass
class DesignPoint:
    config: MachineConfig | None
    overrides: dict[str, Any]
    per_trace: dict[str, dict[str, float]] = field(default_factory=dict)
    error: str | None = None  # infeasible configurations are flagged, not dropped

    @property
    def label(self) -> str:
        if self.config is not None:
            return config_label(self.config)
        o = self.overrides
        return f"{o.get('tiles')}c/{o.get('simd_bits')}v@{o.get('freq_hz', 0) / 1e9:g}GHz"

    @property
    def feasible(self) -> bool:
        return self.error is None

    def geomean(self, metric: str) -> float:
        return geomean(m[metric] for m in self.per_trace.values())

    def summary(self) -> dict[str, float]:
        return {m: self.geomean(m) for m in METRICS if self.per_trace}


@functools.lru_cache(maxsize=64)
def _trace(model: str, mode: str, batch: int) -> Trace:
    return zoo.build(model, mode, batch)


def run_app(model: str, mode: str, batch: int, cfg: MachineConfig,
            options: SimOptions = SimOptions()) -> RunReport:
    """Single pass at batch 1; repeated best sub-batch passes otherwise."""
    if batch == 1:
        return simulate(_trace(model, mode, 1), cfg, options)
    return simulate_batch(lambda s: _trace(model, mode, s), batch, cfg, options)


def app_metrics(run: RunReport, cfg: MachineConfig, coeffs: EnergyCoefficients) -> dict[str, float]:
    pw = estimate_power(cfg, run, coeffs)
    return {"pj_per_op": pw.pj_per_op, "tops_per_mm2": pw.tops_per_mm2,
            "samples_per_s": run.samples_per_s, "utilization": run.utilization}


def evaluate_point(base: MachineConfig, overrides: dict[str, Any],
                   traces: Sequence[tuple[str, str]], batch: int,
                   coeffs: EnergyCoefficients | None = None,
                   options: SimOptions = SimOptions()) -> DesignPoint:
    try:
        cfg = apply_overrides(base, overrides)
        cfg = replace(cfg, name=config_label(cfg))
        coeffs = coeffs or load_coefficients()
        point = DesignPoint(cfg, dict(overrides))
        for model, mode in traces:
            run = run_app(model, mode, batch, cfg, options)
            point.per_trace[zoo.trace_name(model, mode)] = app_metrics(run, cfg, coeffs)
        return point
    except (ConfigError, CoefficientError) as e:
        return DesignPoint(None, dict(overrides), error=str(e))


def _evaluate(args):
    return evaluate_point(*args)


def sweep(spec: SweepSpec, workers: int | None = None,
          coeffs: EnergyCoefficients | None = None) -> list[DesignPoint]:
    """Evaluate every grid point; results come back in spec order."""
    base = preset(spec.base)
    coeffs = coeffs or load_coefficients()
    jobs = [(base, o, spec.traces, spec.batch, coeffs) for o in spec.configs()]
    if workers == 1 or len(jobs) == 1:
        return [_evaluate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate, jobs))


def pareto(items: Sequence[Any], key: Callable[[Any], tuple[float, float]] | None = None) -> list:
    """Non-dominated subset, maximizing the first coordinate and minimizing the second.

    ``key`` maps an item to (tops_per_mm2, pj_per_op); the default reads a
    DesignPoint's geomeans. Input order is preserved.
    """
    if key is None:
        key = lambda p: (p.geomean("tops_per_mm2"), p.geomean("pj_per_op"))  # noqa: E731
    coords = [key(it) for it in items]

    def dominates(a, b):
        return a[0] >= b[0] and a[1] <= b[1] and (a[0] > b[0] or a[1] < b[1])

    return [it for it, c in zip(items, coords)
            if not any(dominates(o, c) for o in coords)]


def optimum_gap(points: Sequence[DesignPoint], reference: DesignPoint,
                metric: str = "pj_per_op") -> tuple[float, dict[str, float]]:
    """Geomean over apps of reference / best-in-grid (>= 1 means the reference is worse)."""
    lower = metric in _MINIMIZE
    gaps = {}
    for app, vals in reference.per_trace.items():
        cands = [p.per_trace[app][metric] for p in points if p.feasible and app in p.per_trace]
        best = min(cands) if lower else max(cands)
        gaps[app] = vals[metric] / best if lower else best / vals[metric]
    return geomean(gaps.values()), gaps


def find_point(points: Sequence[DesignPoint], **overrides) -> DesignPoint:
    for p in points:
        if p.config is not None and all(getattr(p.config, k) == v for k, v in overrides.items()):
            return p
    raise KeyError(f"no design point with {overrides}")


CSV_COLUMNS = ("config", "tiles", "simd_bits", "freq_hz", "llc_bytes", "mem_bw_bytes_per_s",
               "trace") + METRICS + ("pareto", "error")


def write_csv(points: Sequence[DesignPoint], path: str | Path) -> None:
    """One row per (config, trace); ``pareto`` marks the per-trace frontier."""
    frontier: dict[str, set[int]] = {}
    apps = sorted({a for p in points for a in p.per_trace})
    for app in apps:
        have = [p for p in points if app in p.per_trace]
        front = pareto(have, key=lambda p: (p.per_trace[app]["tops_per_mm2"],
                                            p.per_trace[app]["pj_per_op"]))
        frontier[app] = {id(p) for p in front}
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for p in points:
            o = p.overrides
            common = {"config": p.label, "tiles": o.get("tiles"), "simd_bits": o.get("simd_bits"),
                      "freq_hz": o.get("freq_hz"), "llc_bytes": o.get("llc_bytes"),
                      "mem_bw_bytes_per_s": o.get("mem_bw_bytes_per_s")}
            if not p.feasible:
                w.writerow({**common, "error": p.error})
                continue
            for app, m in p.per_trace.items():
                w.writerow({**common, "trace": app, **{k: m[k] for k in METRICS},
                            "pareto": int(id(p) in frontier[app]), "error": ""})


# ---------------------------------------------------------------- headroom

@dataclass(frozen=True)
class CoreScaling:
    multipliers: tuple[float, ...]
    per_app: dict[str, dict[float, float]]  # app -> multiplier -> speedup

    def geomean(self, multiplier: float) -> float:
        return geomean(v[multiplier] for v in self.per_app.values())


def sensitivity_core(cfg: MachineConfig, multipliers: Sequence[float] = (2, 10, 100),
                     traces: Sequence[tuple[str, str]] = SUITE, batch: int = LARGE_BATCH,
                     options: SimOptions = SimOptions()) -> CoreScaling:
    """Speedup from a free per-tile core speedup (compute and LLC/L1/VRF fills scale
    together, DRAM bandwidth fixed), relative to ``cfg``."""
    if any(m < 1 for m in multipliers):
        raise ValueError("core multipliers must be >= 1")
    per_app: dict[str, dict[float, float]] = {}
    for model, mode in traces:
        ref = run_app(model, mode, batch, cfg, options).samples_per_s
        per_app[zoo.trace_name(model, mode)] = {
            m: run_app(model, mode, batch, replace(cfg, core_speedup=float(m)),
                       options).samples_per_s / ref
            for m in multipliers}
    return CoreScaling(tuple(multipliers), per_app)


def sensitivity_membw(cfg: MachineConfig, bandwidths: Sequence, mode: str,
                      traces: Sequence[tuple[str, str]] = SUITE, batch: int = LARGE_BATCH,
                      reference_bw: float = 900e9) -> dict[Any, tuple[float, dict[str, float]]]:
    """Geomean and per-app throughput ratios against ``reference_bw`` for one mode.

    A bandwidth entry of ``"inf+perfect"`` means infinite bandwidth with every
    on-chip reuse hitting.
    """
    apps = [(m, md) for m, md in traces if md == mode]
    ref = {a: run_app(*a, batch, replace(cfg, mem_bw_bytes_per_s=reference_bw)).samples_per_s
           for a in apps}
    out = {}
    for bw in bandwidths:
        if bw == "inf+perfect":
            c, opt = replace(cfg, mem_bw_bytes_per_s=math.inf), SimOptions(perfect_cache=True)
        else:
            c, opt = replace(cfg, mem_bw_bytes_per_s=float(bw)), SimOptions()
        ratios = {zoo.trace_name(*a): run_app(*a, batch, c, opt).samples_per_s / ref[a]
                  for a in apps}
        out[bw] = (geomean(ratios.values()), ratios)
    return out
