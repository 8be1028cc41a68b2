"""Component power and area model with technology and frequency scaling.

Dynamic energy is a sum of per-event costs (MACs, register file, L1, LLC plus mesh
transport, DRAM interface, instruction issue). Static power is per-tile leakage,
LLC leakage and a fixed budget per HBM stack. Coefficients live in a JSON file
so they can be swapped for externally derived numbers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .arch import MiB, MachineConfig, mesh_diameter, peak_ops
from .perf import RunReport
from .workload import DataType

COEFF_VERSION = 1
COEFF_ENV = "UPCYCLE_COEFFICIENTS"
DTYPES = ("Int8", "FP16", "FP32")


class CoefficientError(ValueError):
    """Malformed coefficient file or unknown technology node."""


@dataclass(frozen=True)
class AreaCoefficients:
    core_mm2: float  # scalar in-order core per tile
    simd_lane_mm2: float  # one 16-bit Int8 lane; scaled by the widest supported dtype
    vrf_mm2_per_kib: float
    sram_mm2_per_mib: float  # L1 and LLC arrays with periphery
    noc_router_mm2: float  # per tile
    hbm_phy_mm2: float  # per stack: controller plus PHY


@dataclass(frozen=True)
class EnergyCoefficients:
    node: str
    reference_freq_hz: float
    mac_pj_int8: float
    dtype_power_ratio: dict[str, float]  # per-MAC energy relative to Int8
    dtype_area_ratio: dict[str, float]
    lane_dtype: str  # widest datatype every lane supports (sets lane area)
    vrf_pj_per_byte: float
    l1_pj_per_byte: float
    llc_pj_per_byte: float
    noc_pj_per_byte_hop: float
    dram_pj_per_byte: float
    issue_pj: float  # per issued instruction (fetch, decode, scalar control)
    tile_leakage_w: float
    llc_leakage_w_per_mib: float
    hbm_stack_w: float
    area: AreaCoefficients
    vf_curve: tuple[tuple[float, float], ...]  # (freq_hz, volts), increasing in freq

    def __post_init__(self):
        scalars = {k: v for k, v in self.__dict__.items()
                   if isinstance(v, float) and k != "reference_freq_hz"}
        bad = [k for k, v in scalars.items() if not v > 0]
        bad += [k for k, v in self.area.__dict__.items() if not v > 0]
        if bad:
            raise CoefficientError(f"coefficients must be positive: {bad}")
        for table in (self.dtype_power_ratio, self.dtype_area_ratio):
            if set(table) != set(DTYPES):
                raise CoefficientError(f"dtype ratio table needs {DTYPES}")
            if not table["Int8"] < table["FP16"] < table["FP32"]:
                raise CoefficientError("dtype ratios must be ordered Int8 < FP16 < FP32")
        freqs = [f for f, _ in self.vf_curve]
        if len(freqs) < 2 or freqs != sorted(freqs) or len(set(freqs)) != len(freqs):
            raise CoefficientError("vf_curve needs >= 2 points with increasing frequency")

    def mac_pj(self, dtype: DataType) -> float:
        return self.mac_pj_int8 * self.dtype_power_ratio[DataType.parse(dtype).label]

    def to_dict(self) -> dict[str, Any]:
        d = {k: v for k, v in self.__dict__.items()}
        d["area"] = dict(self.area.__dict__)
        d["vf_curve"] = [list(p) for p in self.vf_curve]
        d["version"] = COEFF_VERSION
        return d


def coefficients_from_dict(doc: dict[str, Any]) -> EnergyCoefficients:
    doc = dict(doc)
    version = doc.pop("version", COEFF_VERSION)
    if version != COEFF_VERSION:
        raise CoefficientError(f"unsupported coefficient version {version}")
    doc.pop("_comment", None)
    try:
        area = AreaCoefficients(**doc.pop("area"))
        curve = tuple((float(f), float(v)) for f, v in doc.pop("vf_curve"))
        return EnergyCoefficients(area=area, vf_curve=curve,
                                  **{k: (float(v) if isinstance(v, (int, float)) else v)
                                     for k, v in doc.items()})
    except (KeyError, TypeError) as e:
        raise CoefficientError(f"malformed coefficients: {e}") from None


def load_coefficients(path: str | Path | None = None) -> EnergyCoefficients:
    """Read a coefficient file; defaults to $UPCYCLE_COEFFICIENTS, then the shipped 7 nm set."""
    path = path or os.environ.get(COEFF_ENV)
    if path:
        text = Path(path).read_text()
    else:
        text = resources.files("upcycle.data").joinpath("coefficients_7nm.json").read_text()
    return coefficients_from_dict(json.loads(text))


# ---------------------------------------------------------------- area

@dataclass(frozen=True)
class AreaBreakdown:
    tile_mm2: float  # one tile
    tiles_mm2: float
    llc_mm2: float
    phy_mm2: float

    @property
    def total_mm2(self) -> float:
        return self.tiles_mm2 + self.llc_mm2 + self.phy_mm2


def area_breakdown(cfg: MachineConfig, coeffs: EnergyCoefficients) -> AreaBreakdown:
    a = coeffs.area
    lane = a.simd_lane_mm2 * coeffs.dtype_area_ratio[coeffs.lane_dtype]
    vrf_kib = cfg.vrf_regs * cfg.simd_bits / 8 / 1024
    tile = (a.core_mm2 + cfg.lanes_per_tile * lane + vrf_kib * a.vrf_mm2_per_kib
            + cfg.l1_bytes / MiB * a.sram_mm2_per_mib + a.noc_router_mm2)
    return AreaBreakdown(tile, tile * cfg.tiles, cfg.llc_bytes / MiB * a.sram_mm2_per_mib,
                         cfg.hbm_stacks * a.hbm_phy_mm2)


def estimate_area(cfg: MachineConfig, coeffs: EnergyCoefficients | None = None) -> float:
    return area_breakdown(cfg, coeffs or load_coefficients()).total_mm2


# ---------------------------------------------------------------- voltage / frequency

def voltage(coeffs: EnergyCoefficients, freq_hz: float) -> float:
    """Piecewise-linear V(f); frequencies outside the curve are rejected."""
    pts = coeffs.vf_curve
    if not pts[0][0] <= freq_hz <= pts[-1][0]:
        raise CoefficientError(f"frequency {freq_hz / 1e9:g} GHz outside the V(f) curve "
                               f"[{pts[0][0] / 1e9:g}, {pts[-1][0] / 1e9:g}] GHz")
    for (f0, v0), (f1, v1) in zip(pts, pts[1:]):
        if freq_hz <= f1:
            return v0 + (v1 - v0) * (freq_hz - f0) / (f1 - f0)
    return pts[-1][1]


_DYNAMIC_FIELDS = ("mac_pj_int8", "vrf_pj_per_byte", "l1_pj_per_byte", "llc_pj_per_byte",
                   "noc_pj_per_byte_hop", "issue_pj")


def scale_frequency(coeffs: EnergyCoefficients, f_from: float, f_to: float) -> EnergyCoefficients:
    """Rescale on-die dynamic energies by (V(f_to)/V(f_from))^2.

    Dynamic power then goes as f * V(f)^2. Leakage, DRAM interface energy and
    the HBM budget are left unchanged.
    """
    k = (voltage(coeffs, f_to) / voltage(coeffs, f_from)) ** 2
    return replace(coeffs, reference_freq_hz=f_to,
                   **{name: getattr(coeffs, name) * k for name in _DYNAMIC_FIELDS})


def at_frequency(coeffs: EnergyCoefficients, freq_hz: float) -> EnergyCoefficients:
    if freq_hz == coeffs.reference_freq_hz:
        return coeffs
    return scale_frequency(coeffs, coeffs.reference_freq_hz, freq_hz)


# ---------------------------------------------------------------- technology scaling

def _tech_table() -> dict[str, dict[str, float]]:
    doc = json.loads(resources.files("upcycle.data").joinpath("tech_scaling.json").read_text())
    return doc["nodes"]


def scale_technology(value: float, from_node: str, to_node: str, kind: str) -> float:
    """Multiply by the ratio of per-node factors (all relative to 7 nm)."""
    if kind not in ("area", "energy"):
        raise ValueError(f"kind must be 'area' or 'energy', got {kind!r}")
    table = _tech_table()
    for node in (from_node, to_node):
        if node not in table:
            raise CoefficientError(f"no scaling entry for node {node!r}; known: {sorted(table)}")
    return value * table[to_node][kind] / table[from_node][kind]


# ---------------------------------------------------------------- power

@dataclass(frozen=True)
class PowerAreaReport:
    config: str
    area_mm2: float
    tdp_w: float
    static_w: float
    avg_power_w: float
    total_time_s: float
    achieved_ops: float
    energy_j: dict[str, float] = field(default_factory=dict)  # dynamic components

    @property
    def dynamic_energy_j(self) -> float:
        return sum(self.energy_j.values())

    @property
    def total_energy_j(self) -> float:
        return self.dynamic_energy_j + self.static_w * self.total_time_s

    @property
    def pj_per_op(self) -> float:
        return self.total_energy_j / self.achieved_ops * 1e12 if self.achieved_ops else math.inf

    @property
    def tops_per_mm2(self) -> float:
        if self.total_time_s <= 0:
            return 0.0
        return self.achieved_ops / self.total_time_s / 1e12 / self.area_mm2

    def summary(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d.update(pj_per_op=self.pj_per_op, tops_per_mm2=self.tops_per_mm2,
                 total_energy_j=self.total_energy_j)
        return d


def mean_hops(cfg: MachineConfig) -> float:
    """Mean LLC transport distance, taken as half the mesh diameter."""
    return mesh_diameter(cfg.tiles) / 2


def static_power(cfg: MachineConfig, coeffs: EnergyCoefficients) -> float:
    return (cfg.tiles * coeffs.tile_leakage_w + cfg.llc_bytes / MiB * coeffs.llc_leakage_w_per_mib
            + cfg.hbm_stacks * coeffs.hbm_stack_w)


def _llc_pj_per_byte(cfg: MachineConfig, c: EnergyCoefficients) -> float:
    return c.llc_pj_per_byte + c.noc_pj_per_byte_hop * mean_hops(cfg)


def dynamic_energy(cfg: MachineConfig, coeffs: EnergyCoefficients, *, macs: dict[DataType, float],
                   alu_slots: float, mem_slots: float, l1_bytes: float, llc_bytes: float,
                   dram_bytes: float) -> dict[str, float]:
    """Energy in joules per component for the given activity counts."""
    c = coeffs
    vec = cfg.simd_bits / 8
    pj = {
        "mac": sum(n * c.mac_pj(dt) for dt, n in macs.items()),
        # Each ALU op touches two sources and the accumulator; each memory op one register.
        "vrf": (3 * alu_slots + mem_slots) * vec * c.vrf_pj_per_byte,
        "l1": l1_bytes * c.l1_pj_per_byte,
        "llc": llc_bytes * _llc_pj_per_byte(cfg, c),
        "dram": dram_bytes * c.dram_pj_per_byte,
        "issue": (alu_slots + mem_slots) * c.issue_pj,
    }
    return {k: v * 1e-12 for k, v in pj.items()}


def tdp(cfg: MachineConfig, coeffs: EnergyCoefficients | None = None) -> float:
    """Power with every unit at full rate on Int8.

    Every tile issues one FMA and one vector load per cycle, the LLC delivers its
    fill rate, and DRAM runs at its effective bandwidth.
    """
    c = at_frequency(coeffs or load_coefficients(), cfg.freq_hz)
    tile_cycles = cfg.tiles * cfg.freq_hz  # per second
    macs = peak_ops(cfg, DataType.Int8) / 2
    dram = cfg.effective_mem_bw if math.isfinite(cfg.effective_mem_bw) else 0.0
    dyn = dynamic_energy(cfg, c, macs={DataType.Int8: macs}, alu_slots=tile_cycles,
                         mem_slots=tile_cycles, l1_bytes=tile_cycles * cfg.simd_bits / 8,
                         llc_bytes=tile_cycles * cfg.llc_fill_bytes_per_cycle_per_tile,
                         dram_bytes=dram)
    return sum(dyn.values()) + static_power(cfg, c)


def estimate_power(cfg: MachineConfig, run: RunReport,
                   coeffs: EnergyCoefficients | None = None) -> PowerAreaReport:
    """Average power and efficiency of ``run`` on ``cfg``."""
    base = coeffs or load_coefficients()
    c = at_frequency(base, cfg.freq_hz)
    passes = run.batch // run.micro_batch if run.micro_batch else 1
    macs: dict[DataType, float] = {}
    alu = mem = 0.0
    for e in run.operators:
        dt = DataType.parse(e.dtype)
        macs[dt] = macs.get(dt, 0.0) + passes * e.issued_ops / 2
        alu += passes * e.alu_slots
        mem += passes * e.mem_slots
    dyn = dynamic_energy(cfg, c, macs=macs, alu_slots=alu, mem_slots=mem, l1_bytes=run.l1_bytes,
                         llc_bytes=run.llc_bytes, dram_bytes=run.dram_bytes)
    stat = static_power(cfg, c)
    t = run.total_time_s
    avg = (sum(dyn.values()) + stat * t) / t if t > 0 else stat
    return PowerAreaReport(cfg.name, estimate_area(cfg, base), tdp(cfg, base), stat, avg, t,
                           float(run.total_ops), dyn)
