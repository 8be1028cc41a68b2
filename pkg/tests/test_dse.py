import csv
import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from upcycle import zoo
from upcycle.arch import preset
from upcycle.dse import (CSV_COLUMNS, DesignPoint, SweepSpec, evaluate_point, find_point, geomean,
                         load_manifest, optimum_gap, pareto, sensitivity_core, sweep, write_csv)
from upcycle.perf import simulate
from upcycle.powerarea import estimate_power, load_coefficients

BASE = preset("base")
TINY = SweepSpec(tiles=(2048,), simd_bits=(512,), freq_hz=(2e9,), traces=(("alexnet", "inference"),),
                 batch=1)


def test_sweep_of_one_matches_direct_run():
    (point,) = sweep(TINY, workers=1)
    run = simulate(zoo.build("alexnet", "inference", 1), BASE)
    pw = estimate_power(BASE, run, load_coefficients())
    m = point.per_trace["alexnet_inf"]
    assert m["pj_per_op"] == pytest.approx(pw.pj_per_op, rel=1e-12)
    assert m["samples_per_s"] == pytest.approx(run.samples_per_s, rel=1e-12)
    assert m["utilization"] == pytest.approx(run.utilization, rel=1e-12)


def test_infeasible_points_are_flagged_not_dropped():
    spec = SweepSpec(tiles=(0, 2048), simd_bits=(512,), freq_hz=(2e9,),
                     traces=(("alexnet", "inference"),), batch=1)
    points = sweep(spec, workers=1)
    assert len(points) == 2
    assert not points[0].feasible and points[0].error
    assert points[1].feasible


def test_out_of_range_frequency_is_flagged():
    p = evaluate_point(BASE, {"freq_hz": 9e9}, (("alexnet", "inference"),), 1)
    assert not p.feasible


def test_sweep_is_deterministic():
    a = [p.per_trace for p in sweep(TINY, workers=1)]
    b = [p.per_trace for p in sweep(TINY, workers=1)]
    assert a == b


def test_optimum_gap_against_itself():
    (point,) = sweep(TINY, workers=1)
    gap, per_app = optimum_gap([point], point)
    assert gap == 1.0 and per_app == {"alexnet_inf": 1.0}


def test_find_point():
    points = sweep(TINY, workers=1)
    assert find_point(points, tiles=2048).feasible
    with pytest.raises(KeyError):
        find_point(points, tiles=4096)


def test_pareto_single_and_dominated():
    assert pareto([(1.0, 1.0)], key=lambda p: p) == [(1.0, 1.0)]
    pts = [(2.0, 1.0), (1.0, 2.0), (3.0, 3.0), (2.0, 1.0)]
    assert pareto(pts, key=lambda p: p) == [(2.0, 1.0), (3.0, 3.0), (2.0, 1.0)]


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=25))
def test_pareto_matches_brute_force(pts):
    front = pareto(pts, key=lambda p: p)
    for p in pts:
        dominated = any(q[0] >= p[0] and q[1] <= p[1] and q != p for q in pts)
        assert (p in front) == (not dominated)
    assert front


def test_core_scaling_identity_and_bound():
    scaling = sensitivity_core(BASE, (1, 4), traces=(("alexnet", "inference"),), batch=1)
    per = scaling.per_app["alexnet_inf"]
    assert per[1] == 1.0
    assert 1.0 <= per[4] <= 4.0 + 1e-9
    with pytest.raises(ValueError):
        sensitivity_core(BASE, (0.5,), traces=(("alexnet", "inference"),), batch=1)


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"version": 1, "tiles": [1024], "simd_bits": [256],
                                "freq_hz": [1e9], "traces": [["alexnet", "inference"]],
                                "batch": 4}))
    spec = load_manifest(path)
    assert spec.tiles == (1024,) and spec.traces == (("alexnet", "inference"),)
    assert spec.batch == 4 and spec.size == 1
    path.write_text(json.dumps({"version": 2}))
    with pytest.raises(ValueError):
        load_manifest(path)


def test_empty_axis_rejected():
    with pytest.raises(ValueError):
        SweepSpec(tiles=())
    with pytest.raises(ValueError):
        SweepSpec(metrics=("latency",))


def test_csv_layout(tmp_path):
    spec = SweepSpec(tiles=(0, 2048), simd_bits=(512,), freq_hz=(2e9,),
                     traces=(("alexnet", "inference"),), batch=1)
    path = tmp_path / "s.csv"
    write_csv(sweep(spec, workers=1), path)
    with open(path) as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == CSV_COLUMNS
        rows = list(reader)
    assert len(rows) == 2
    assert rows[0]["error"] and rows[1]["pareto"] == "1"


def test_geomean():
    assert geomean([2.0, 8.0]) == pytest.approx(4.0)
    assert math.isnan(geomean([]))
    point = DesignPoint(None, {}, per_trace={"a": {"x": 1.0}, "b": {"x": 4.0}})
    assert point.geomean("x") == pytest.approx(2.0)
