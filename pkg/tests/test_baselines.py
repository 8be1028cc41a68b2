import pytest

from upcycle import baselines
from upcycle.baselines import (AppResult, a100_pj_per_op, a100_throughput, compare_a100,
                               compare_runs, provenance, table)


def test_every_section_has_provenance():
    for name, section in table().items():
        if name == "version":
            continue
        assert provenance(name).strip(), name


def test_table_is_read_only():
    with pytest.raises(TypeError):
        table()["specs"]["a100"]["tdp_w"] = 1.0
    with pytest.raises(TypeError):
        table()["new"] = {}


def test_a100_arithmetic():
    util = table()["utilization"]["resnet50_inf"][0]
    spec = table()["specs"]["a100"]
    gops = table()["gops_per_sample"]["resnet50_inf"]
    peak = spec["peak_int8_tops"] * 1e12
    assert a100_throughput("resnet50_inf", "small") == pytest.approx(util * peak / (gops * 1e9))
    assert a100_pj_per_op("resnet50_inf", "small") == pytest.approx(
        spec["tdp_w"] / (util * peak) * 1e12)
    with pytest.raises(ValueError):
        baselines.a100_utilization("resnet50_inf", "medium")


def test_self_comparison_is_unity():
    runs = [AppResult("resnet50_inf", 1, 1000.0, 0.5, 7.8),
            AppResult("bert_base_128_train", 64, 50.0, 0.8, 70.0)]
    rep = compare_runs(runs, runs)
    assert all(r["speedup"] == 1.0 and r["rel_efficiency"] == 1.0 for r in rep.rows)
    assert all(v == pytest.approx(1.0) for v in rep.geomeans().values())


def test_missing_entries_warn_and_are_excluded():
    rep = compare_a100([AppResult("nosuch_inf", 1, 1.0, 1.0, 1.0)])
    assert rep.rows == [] and "nosuch_inf" in rep.warnings[0]
    rep = compare_runs([AppResult("resnet50_inf", 1, 1.0, 1.0, 1.0)], [])
    assert rep.rows == [] and rep.warnings


def test_a100_comparison_row():
    thr = a100_throughput("resnet50_inf", "small")
    rep = compare_a100([AppResult("resnet50_inf", 1, 2 * thr, 1.0, 7.8)])
    (row,) = rep.rows
    assert row["speedup"] == pytest.approx(2.0)
    assert row["regime"] == "small" and row["mode"] == "inference"
