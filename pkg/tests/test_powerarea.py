import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import empty_trace, zoo_trace
from upcycle import zoo
from upcycle.arch import preset
from upcycle.perf import simulate, simulate_batch
from upcycle.powerarea import (COEFF_ENV, CoefficientError, area_breakdown, coefficients_from_dict,
                               dynamic_energy, estimate_area, estimate_power, load_coefficients,
                               scale_frequency, scale_technology, static_power, tdp, voltage)
from upcycle.workload import DataType

BASE = preset("base")
COEFFS = load_coefficients()


def test_area_is_additive():
    a = area_breakdown(BASE, COEFFS)
    assert a.total_mm2 == pytest.approx(a.tiles_mm2 + a.llc_mm2 + a.phy_mm2)
    assert a.tiles_mm2 == pytest.approx(BASE.tiles * a.tile_mm2)
    # With the tile term removed only the LLC and PHY remain.
    assert a.total_mm2 - a.tiles_mm2 == pytest.approx(a.llc_mm2 + a.phy_mm2)


def test_doubling_tiles_doubles_tile_area():
    a = area_breakdown(BASE, COEFFS)
    b = area_breakdown(replace(BASE, tiles=2 * BASE.tiles), COEFFS)
    assert b.tiles_mm2 == 2 * a.tiles_mm2
    assert (b.llc_mm2, b.phy_mm2) == (a.llc_mm2, a.phy_mm2)


def test_zero_length_run_is_static_only():
    run = simulate(empty_trace(), BASE)
    p = estimate_power(BASE, run, COEFFS)
    assert p.avg_power_w == p.static_w == static_power(BASE, COEFFS)
    assert p.dynamic_energy_j == 0


def test_energy_closure():
    run = simulate(zoo_trace("resnet50"), BASE)
    p = estimate_power(BASE, run, COEFFS)
    assert p.total_energy_j == p.dynamic_energy_j + p.static_w * run.total_time_s
    assert p.avg_power_w * run.total_time_s == pytest.approx(p.total_energy_j, rel=1e-12)
    # Per-operator activity summed separately gives the same dynamic energy.
    parts = [dynamic_energy(BASE, COEFFS, macs={DataType.parse(e.dtype): e.issued_ops / 2},
                            alu_slots=e.alu_slots, mem_slots=e.mem_slots, l1_bytes=e.l1_bytes,
                            llc_bytes=e.llc_bytes,
                            dram_bytes=e.dram_read_bytes + e.dram_write_bytes)
             for e in run.operators]
    for key in p.energy_j:
        assert math.fsum(d[key] for d in parts) == pytest.approx(p.energy_j[key], rel=1e-12)


def test_batched_run_energy_scales_with_passes():
    run = simulate_batch(lambda s: zoo.build("alexnet", "inference", s), 16, BASE, policy="best")
    single = simulate(zoo.build("alexnet", "inference", run.micro_batch), BASE)
    passes = 16 // run.micro_batch
    p1 = estimate_power(BASE, single, COEFFS)
    pn = estimate_power(BASE, run, COEFFS)
    assert pn.dynamic_energy_j == pytest.approx(passes * p1.dynamic_energy_j)


def test_average_power_stays_under_tdp():
    for model, mode in zoo.SHIPPED:
        p = estimate_power(BASE, simulate(zoo_trace(model, mode), BASE), COEFFS)
        assert p.avg_power_w <= p.tdp_w, (model, mode)


def test_technology_scaling():
    assert scale_technology(3.0, "7nm", "7nm", "energy") == 3.0
    there = scale_technology(3.0, "7nm", "65nm", "area")
    assert scale_technology(there, "65nm", "7nm", "area") == pytest.approx(3.0)
    assert scale_technology(1.0, "7nm", "65nm", "energy") > 1.0
    with pytest.raises(CoefficientError):
        scale_technology(1.0, "7nm", "3nm", "energy")
    with pytest.raises(ValueError):
        scale_technology(1.0, "7nm", "65nm", "delay")


def test_frequency_identity():
    assert scale_frequency(COEFFS, 2e9, 2e9) == replace(COEFFS, reference_freq_hz=2e9)


def test_halving_clock_more_than_halves_dynamic_power():
    low = scale_frequency(COEFFS, 2e9, 1e9)
    ratio = 0.5 * low.mac_pj_int8 / COEFFS.mac_pj_int8
    f, v = zip(*COEFFS.vf_curve)
    expected = 0.5 * (np.interp(1e9, f, v) / np.interp(2e9, f, v)) ** 2
    assert ratio == pytest.approx(expected)
    assert ratio < 0.5


def test_voltage_outside_curve():
    with pytest.raises(CoefficientError):
        voltage(COEFFS, 10e9)


def test_coefficient_validation():
    doc = COEFFS.to_dict()
    assert coefficients_from_dict(doc) == COEFFS
    bad = json.loads(json.dumps(doc))
    bad["dtype_power_ratio"]["FP16"] = 0.5
    with pytest.raises(CoefficientError):
        coefficients_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    bad["issue_pj"] = -1
    with pytest.raises(CoefficientError):
        coefficients_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    del bad["area"]
    with pytest.raises(CoefficientError):
        coefficients_from_dict(bad)


def test_env_override(tmp_path, monkeypatch):
    doc = COEFFS.to_dict()
    doc["hbm_stack_w"] = 1.0
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    monkeypatch.setenv(COEFF_ENV, str(path))
    assert load_coefficients().hbm_stack_w == 1.0


def test_fp16_mac_costs_more_than_int8():
    assert COEFFS.mac_pj(DataType.FP16) > COEFFS.mac_pj(DataType.Int8)
    assert 2 <= COEFFS.dtype_power_ratio["FP16"] / COEFFS.dtype_power_ratio["Int8"] <= 5


def test_area_and_tdp_grow_with_tiles():
    small = replace(BASE, tiles=1024)
    assert estimate_area(small, COEFFS) < estimate_area(BASE, COEFFS)
    assert tdp(small, COEFFS) < tdp(BASE, COEFFS)


RUN = simulate(zoo_trace("bert_base_128"), BASE)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 0.99))
def test_pj_per_op_falls_as_utilization_rises(shrink):
    faster = replace(RUN, total_time_s=RUN.total_time_s * shrink)
    assert estimate_power(BASE, faster, COEFFS).pj_per_op < estimate_power(BASE, RUN, COEFFS).pj_per_op
