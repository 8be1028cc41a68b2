import json
import math

import pytest
from hypothesis import given, strategies as st

from upcycle.arch import (ConfigError, MachineConfig, apply_overrides, load_config, mesh_diameter,
                          peak_ops, peak_rates, preset)
from upcycle.workload import DataType


def test_base_peaks():
    cfg = preset("Base")
    assert peak_ops(cfg, DataType.Int8) == 524.288e12
    assert peak_ops(cfg, DataType.FP16) == 262.144e12
    assert round(peak_ops(cfg, DataType.Int8) / 1e12) == 524
    assert round(peak_ops(cfg, DataType.FP16) / 1e12) == 262


def test_riss_peak():
    # 1 tile x 32 lanes x 2 MACs x 2 ops x 1.2 GHz
    assert peak_ops(preset("riss"), DataType.Int8) == pytest.approx(1 * 32 * 2 * 2 * 1.2e9)
    assert peak_ops(preset("riss"), DataType.Int8) == pytest.approx(153.6e9)


def test_presets():
    b = preset("base")
    assert (b.tiles, b.simd_bits, b.freq_hz) == (2048, 512, 2e9)
    r = preset("Riss")
    assert (r.tiles, r.llc_bytes, r.freq_hz) == (1, 192 * 1024, 1.2e9)
    with pytest.raises(ConfigError):
        preset("nope")


def test_fill_defaults_follow_simd_width():
    b = preset("base")
    assert b.llc_fill_bytes_per_cycle_per_tile == 32
    assert b.l1_fill_bytes_per_cycle_per_tile == 64
    narrow = b.with_overrides(simd_bits=256)
    assert narrow.llc_fill_bytes_per_cycle_per_tile == 16
    assert narrow.l1_fill_bytes_per_cycle_per_tile == 32


def test_override_mem_bw():
    cfg = preset("base").with_overrides(mem_bw_bytes_per_s=450e9)
    assert cfg.mem_bw_bytes_per_s == 450e9
    assert cfg.effective_mem_bw == pytest.approx(270e9)
    assert preset("base").mem_bw_bytes_per_s == 900e9


def test_string_overrides_are_coerced():
    cfg = apply_overrides(preset("base"), {"tiles": "1024", "mem_bw_bytes_per_s": "inf"})
    assert cfg.tiles == 1024 and math.isinf(cfg.mem_bw_bytes_per_s)
    with pytest.raises(ConfigError):
        apply_overrides(preset("base"), {"tiles": "10.5"})
    with pytest.raises(ConfigError):
        apply_overrides(preset("base"), {"warp_size": 32})


@pytest.mark.parametrize("overrides", [
    {"tiles": 0}, {"simd_bits": 384}, {"vrf_regs": 4}, {"mem_bw_efficiency": 1.5},
    {"l1_fill_bytes_per_cycle_per_tile": 8}, {"freq_hz": 0}, {"core_speedup": 0.5},
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        preset("base").with_overrides(**overrides)


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "base", "tiles": 1024}))
    assert load_config(p).tiles == 1024
    p.write_text(json.dumps({"tiles": 16, "simd_bits": 256}))
    assert load_config(p) == MachineConfig(tiles=16, simd_bits=256)
    p.write_text(json.dumps({"simd_bits": 256}))
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text(json.dumps({"version": 9, "tiles": 1}))
    with pytest.raises(ConfigError):
        load_config(p)


def test_mesh_diameter():
    assert mesh_diameter(1) == 0
    assert mesh_diameter(4) == 2
    assert mesh_diameter(2048) == 64 + 32 - 2


@given(st.integers(1, 8192), st.sampled_from([128, 256, 512]), st.floats(0.1e9, 4e9))
def test_peak_is_linear(tiles, simd, freq):
    cfg = MachineConfig(tiles=tiles, simd_bits=simd, freq_hz=freq)
    r = peak_rates(cfg)
    assert r.int8_ops_per_s == pytest.approx(2 * r.fp16_ops_per_s)
    assert r.int8_ops_per_s == pytest.approx(tiles * simd / 16 * 4 * freq)
