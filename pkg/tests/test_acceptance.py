"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st
import pytest

from conftest import acceptance
from upcycle import dse, zoo
from upcycle.arch import peak_ops, preset
from upcycle.cli import check_emulation
from upcycle.mapping import SCRATCH_REGS, decompose
from upcycle.perf import simulate, simulate_batch
from upcycle.powerarea import (area_breakdown, dynamic_energy, estimate_power, load_coefficients,
                               tdp)
from upcycle.workload import DataType, characterize, load_trace

BASE = preset("base")
COEFFS = load_coefficients()
TRACE_DIR = Path(__file__).resolve().parents[1] / "traces"


def within(x, target, tol):
    return abs(x - target) <= tol


@pytest.fixture(scope="module")
def grid():
    points = dse.sweep(dse.load_manifest(
        Path(dse.__file__).parent / "data" / "sweep_default.json"))
    return [p for p in points if p.feasible]


def test_criterion_1_peak_rates():
    i8, f16 = peak_ops(BASE, DataType.Int8), peak_ops(BASE, DataType.FP16)
    acceptance(1, i8 == 524.288e12 and f16 == 262.144e12 and round(i8 / 1e12) == 524
               and round(f16 / 1e12) == 262,
               f"Base peak {i8 / 1e12:.3f}/{f16 / 1e12:.3f} TOPs (Int8/FP16), expect 524/262")


def test_criterion_2_workload_census():
    r = characterize(load_trace(TRACE_DIR / "resnet50_inf.json"))
    b = characterize(load_trace(TRACE_DIR / "bert_base_128_inf.json"))
    ok = (abs(r.gops_per_sample / 7.8 - 1) <= 0.10 and within(r.distinct_shape_count, 30, 3)
          and abs(b.gops_per_sample / 23.0 - 1) <= 0.10 and b.distinct_shape_count == 8)
    acceptance(2, ok, f"ResNet50 {r.gops_per_sample:.2f} GOPs/{r.distinct_shape_count} shapes "
               f"(7.8 +-10%, 30 +-3); Bert Base 128 {b.gops_per_sample:.2f} GOPs/"
               f"{b.distinct_shape_count} shapes (23.0 +-10%, 8)")


def test_criterion_3_emulation_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.time()
    int8_fail = fp16_fail = 0
    worst = 0.0
    for _ in range(1000):
        shape = tuple(int(x) for x in rng.integers(1, 65, 3))
        ok, _ = check_emulation(rng, shape, DataType.Int8, BASE)
        int8_fail += not ok
    for _ in range(200):
        shape = tuple(int(x) for x in rng.integers(1, 65, 3))
        ok, err = check_emulation(rng, shape, DataType.FP16, BASE)
        fp16_fail += not ok
        worst = max(worst, err)
    elapsed = time.time() - t0
    acceptance(3, int8_fail == 0 and fp16_fail == 0 and elapsed < 60,
               f"1000 Int8 cases, {int8_fail} mismatches; 200 FP16 cases, {fp16_fail} over "
               f"1e-3 (worst {worst:.1e}); {elapsed:.1f} s (< 60 s)")


def _kernels(cfg):
    for path in sorted(TRACE_DIR.glob("*.json")):
        trace = load_trace(path)
        for node in trace.nodes:
            d = decompose(node, cfg, trace.tensors)
            for dd in (d, d.chain_step):
                if dd is not None and dd.microkernel is not None:
                    yield path.stem, node, dd.microkernel


def test_criterion_4_register_budget_and_hiding():
    checked = hidden_checked = 0
    bad = []
    for name, node, mk in _kernels(BASE):
        checked += 1
        if mk.tm * mk.tn + mk.tm + mk.tn + SCRATCH_REGS > BASE.vrf_regs:
            bad.append((name, node.id, "budget"))
        if mk.vectorized_dim == "M" and mk.tm * mk.tn >= 2:
            hidden_checked += 1
            if mk.loads_per_kstep > mk.fmas_per_kstep:
                bad.append((name, node.id, "loads"))
    acceptance(4, not bad and checked > 0,
               f"{checked} kernels within {BASE.vrf_regs} registers, {hidden_checked} at minimum "
               f"tiling with loads <= fmas; violations {bad[:3]}")


def test_criterion_5_resnet_utilization():
    b1 = simulate(zoo.build("resnet50", "inference", 1), BASE).utilization
    b64 = simulate_batch(lambda s: zoo.build("resnet50", "inference", s), 64, BASE).utilization
    ok = within(100 * b1, 35.9, 10) and b64 > b1 and within(100 * b64, 58.0, 12)
    acceptance(5, ok, f"ResNet50 Int8 utilization b1 {100 * b1:.1f}% (35.9 +-10 pp), "
               f"b64 {100 * b64:.1f}% (58.0 +-12 pp, > b1)")


def test_criterion_6_membw_sensitivity():
    inf = dse.sensitivity_membw(BASE, [450e9, 1.8e12, math.inf], "inference")
    train = dse.sensitivity_membw(BASE, ["inf+perfect"], "training")
    got = [inf[450e9][0], inf[1.8e12][0], inf[math.inf][0], train["inf+perfect"][0]]
    want = [(0.89, 0.06), (1.03, 0.04), (1.04, 0.05), (1.69, 0.25)]
    marks = ["ok" if within(g, t, d) else "out" for g, (t, d) in zip(got, want)]
    acceptance(6, all(m == "ok" for m in marks),
               "inference 450G/1.8T/inf " + ", ".join(
                   f"{g:.3f} ({t}+-{d} {m})" for g, (t, d), m in zip(got[:3], want, marks))
               + f"; training inf+perfect {got[3]:.3f} (1.69+-0.25 {marks[3]})")


def test_criterion_7_core_scaling():
    res = dse.sensitivity_core(BASE, (2, 100))
    two, hundred = res.geomean(2), res.geomean(100)
    acceptance(7, 1.3 <= two <= 2.0 and 2.5 <= hundred <= 5.0,
               f"geomean speedup 2X core {two:.2f} in [1.3, 2.0]; 100X {hundred:.2f} in [2.5, 5.0]")


def test_criterion_8a_small_slow_point(grid):
    base = dse.find_point(grid, tiles=2048, simd_bits=512, freq_hz=2e9)
    bad = dse.find_point(grid, tiles=1024, simd_bits=256, freq_hz=1e9)
    ratio = bad.geomean("pj_per_op") / base.geomean("pj_per_op")
    acceptance(8, ratio >= 2.0, f"(a) 1024c/256v@1GHz geomean pJ/op {ratio:.2f}x Base (>= 2)")


def test_criterion_8b_base_near_optimum(grid):
    base = dse.find_point(grid, tiles=2048, simd_bits=512, freq_hz=2e9)
    gap, _ = dse.optimum_gap(grid, base)
    acceptance(8, gap - 1 <= 0.25, f"(b) Base {100 * (gap - 1):.1f}% above the per-app grid "
               f"optimum geomean (<= 25%)")


def test_criterion_8c_wide_tile_rnnt(grid):
    base = dse.find_point(grid, tiles=2048, simd_bits=512, freq_hz=2e9)
    wide = dse.find_point(grid, tiles=4096, simd_bits=256, freq_hz=2e9)
    pj = {app: (wide.per_trace[app]["pj_per_op"], base.per_trace[app]["pj_per_op"])
          for app in ("rnnt_train", "bert_large_128_train")}
    ok = pj["rnnt_train"][0] < pj["rnnt_train"][1] and pj["bert_large_128_train"][0] > \
        pj["bert_large_128_train"][1]
    acceptance(8, ok, "(c) 4096c/256v vs Base pJ/op: RNN-T training "
               f"{pj['rnnt_train'][0]:.3f} vs {pj['rnnt_train'][1]:.3f} (expect lower), Bert "
               f"training {pj['bert_large_128_train'][0]:.3f} vs "
               f"{pj['bert_large_128_train'][1]:.3f} (expect higher)")


def test_criterion_9_calibration():
    area = area_breakdown(BASE, COEFFS).total_mm2
    watts = tdp(BASE, COEFFS)
    floor = watts / peak_ops(BASE, DataType.Int8) * 1e12
    ok = (abs(area / 141 - 1) <= 0.15 and abs(watts / 130 - 1) <= 0.15
          and abs(floor / 0.25 - 1) <= 0.20)
    acceptance(9, ok, f"Base area {area:.1f} mm2 (141 +-15%), TDP {watts:.1f} W (130 +-15%), "
               f"Int8 floor {floor:.3f} pJ/op (0.25 +-20%)")


SMALL = ["alexnet", "mobilenet", "resnet50", "bert_base_128"]
_failures: list[str] = []


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(SMALL), st.sampled_from([1024, 2048]), st.sampled_from([256, 512]),
       st.floats(1.1, 4.0))
def _monotone(model, tiles, simd, k):
    cfg = replace(BASE, tiles=tiles, simd_bits=simd)
    trace = zoo.build(model, "inference", 1)
    t = simulate(trace, cfg).total_time_s
    for faster in (replace(cfg, mem_bw_bytes_per_s=cfg.mem_bw_bytes_per_s * k),
                   replace(cfg, tiles=cfg.tiles * 2),
                   replace(cfg, freq_hz=min(cfg.freq_hz * k, 4e9))):
        if simulate(trace, faster).total_time_s > t * (1 + 1e-12):
            _failures.append(f"monotonicity {model} {faster.name}")
    run = simulate(trace, cfg)
    if not 0 < run.utilization <= 1:
        _failures.append(f"utilization {model} {run.utilization}")
    if simulate(trace, cfg) != run:
        _failures.append(f"determinism {model}")


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=20))
def _pareto(pts):
    front = dse.pareto(pts, key=lambda p: p)
    for p in pts:
        dominated = any(q[0] >= p[0] and q[1] <= p[1] and q != p for q in pts)
        if (p in front) == dominated:
            _failures.append(f"pareto {p}")


def test_criterion_10_property_suite():
    _failures.clear()
    _monotone()
    _pareto()
    run = simulate(zoo.build("resnet50", "training", 1), BASE)
    pw = estimate_power(BASE, run, COEFFS)
    parts = [dynamic_energy(BASE, COEFFS, macs={DataType.parse(e.dtype): e.issued_ops / 2},
                            alu_slots=e.alu_slots, mem_slots=e.mem_slots, l1_bytes=e.l1_bytes,
                            llc_bytes=e.llc_bytes,
                            dram_bytes=e.dram_read_bytes + e.dram_write_bytes)
             for e in run.operators]
    for key, total in pw.energy_j.items():
        if not math.isclose(math.fsum(d[key] for d in parts), total, rel_tol=1e-12):
            _failures.append(f"energy closure {key}")
    if pw.total_energy_j != pw.dynamic_energy_j + pw.static_w * run.total_time_s:
        _failures.append("energy closure total")
    acceptance(10, not _failures, "monotonicity in bandwidth/tiles/frequency, utilization in "
               f"(0, 1], determinism, energy closure, Pareto vs brute force; "
               f"failures {_failures[:3]}")
