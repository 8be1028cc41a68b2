"""Published reference numbers (A100, EyerissV2, reported accelerator figures) and
the comparison arithmetic built on them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from types import MappingProxyType
from typing import Any, Mapping, Sequence

REGIMES = ("small", "large")


def _freeze(obj: Any) -> Any:
    if isinstance(obj, dict):
        return MappingProxyType({k: _freeze(v) for k, v in obj.items()})
    if isinstance(obj, list):
        return tuple(_freeze(v) for v in obj)
    return obj


@lru_cache(maxsize=1)
def table() -> Mapping[str, Any]:
    """The full read-only baseline table; every section carries a ``_source`` tag."""
    text = resources.files("upcycle.data").joinpath("baselines.json").read_text()
    return _freeze(json.loads(text))


def provenance(section: str) -> str:
    return table()[section]["_source"]


def a100_utilization(app: str, regime: str) -> float:
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    row = table()["utilization"][app]
    return row[0] if regime == "small" else row[1]


def reported_utilization(app: str, regime: str) -> float:
    """The accelerator's own published utilization, for side-by-side reporting."""
    row = table()["utilization"][app]
    return row[2] if regime == "small" else row[3]


def a100_peak_ops(mode: str) -> float:
    spec = table()["specs"]["a100"]
    tops = spec["peak_int8_tops"] if mode == "inference" else spec["peak_fp16_tops"]
    return tops * 1e12


def a100_throughput(app: str, regime: str, gops_per_sample: float | None = None) -> float:
    """Samples/s reconstructed as utilization x peak / ops per sample."""
    mode = "inference" if app.endswith("_inf") else "training"
    gops = gops_per_sample if gops_per_sample is not None else table()["gops_per_sample"][app]
    return a100_utilization(app, regime) * a100_peak_ops(mode) / (gops * 1e9)


def a100_pj_per_op(app: str, regime: str) -> float:
    """Average energy per op at TDP for the reconstructed throughput."""
    mode = "inference" if app.endswith("_inf") else "training"
    tdp = table()["specs"]["a100"]["tdp_w"]
    return tdp / (a100_utilization(app, regime) * a100_peak_ops(mode)) * 1e12


@dataclass(frozen=True)
class AppResult:
    """What a comparison needs from one simulated run."""
    app: str  # trace name, e.g. resnet50_inf
    batch: int
    samples_per_s: float
    pj_per_op: float
    gops_per_sample: float

    @property
    def regime(self) -> str:
        return "small" if self.batch == 1 else "large"

    @property
    def mode(self) -> str:
        return "inference" if self.app.endswith("_inf") else "training"


@dataclass
class ComparisonReport:
    baseline: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def geomeans(self) -> dict[str, float]:
        """Geomean speedup and efficiency gain per (mode, regime)."""
        out: dict[str, float] = {}
        groups: dict[tuple[str, str], list[dict]] = {}
        for r in self.rows:
            groups.setdefault((r["mode"], r["regime"]), []).append(r)
        for (mode, regime), rows in sorted(groups.items()):
            for metric in ("speedup", "rel_efficiency"):
                vals = [r[metric] for r in rows if r[metric] > 0 and math.isfinite(r[metric])]
                if vals:
                    out[f"{mode}_{regime}_{metric}"] = math.exp(
                        sum(map(math.log, vals)) / len(vals))
        return out

    footer = ("A100 samples/s = published utilization x published peak / published ops "
              "per sample; A100 pJ/op = published TDP / (utilization x peak).")


def compare_a100(results: Sequence[AppResult]) -> ComparisonReport:
    """Speedup (samples/s ratio) and relative efficiency (pJ/op ratio) against A100."""
    rep = ComparisonReport("a100")
    util = table()["utilization"]
    gops = table()["gops_per_sample"]
    for r in results:
        if r.app not in util:
            rep.warnings.append(f"{r.app}: no published A100 utilization; excluded")
            continue
        g = gops.get(r.app)
        if g is None:
            rep.warnings.append(f"{r.app}: no published ops/sample; using the trace's "
                                f"{r.gops_per_sample:.2f} GOPs")
            g = r.gops_per_sample
        ref_thr = a100_throughput(r.app, r.regime, g)
        ref_pj = a100_pj_per_op(r.app, r.regime)
        rep.rows.append({"app": r.app, "mode": r.mode, "regime": r.regime, "batch": r.batch,
                         "samples_per_s": r.samples_per_s, "a100_samples_per_s": ref_thr,
                         "speedup": r.samples_per_s / ref_thr,
                         "pj_per_op": r.pj_per_op, "a100_pj_per_op": ref_pj,
                         "rel_efficiency": ref_pj / r.pj_per_op if r.pj_per_op else math.inf})
    return rep


def compare_runs(results: Sequence[AppResult], reference: Sequence[AppResult]) -> ComparisonReport:
    """Speedup of ``results`` over matching (app, batch) entries of ``reference``."""
    rep = ComparisonReport("runs")
    ref = {(r.app, r.batch): r for r in reference}
    for r in results:
        other = ref.get((r.app, r.batch))
        if other is None:
            rep.warnings.append(f"{r.app} batch {r.batch}: absent from reference; excluded")
            continue
        rep.rows.append({"app": r.app, "mode": r.mode, "regime": r.regime, "batch": r.batch,
                         "samples_per_s": r.samples_per_s,
                         "reference_samples_per_s": other.samples_per_s,
                         "speedup": r.samples_per_s / other.samples_per_s,
                         "pj_per_op": r.pj_per_op, "reference_pj_per_op": other.pj_per_op,
                         "rel_efficiency": other.pj_per_op / r.pj_per_op})
    return rep
