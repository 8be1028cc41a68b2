"""Machine configurations and the peak rates derived from them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from .workload import DataType

KiB = 1024
MiB = 1024 * 1024
GB = 1e9

CONFIG_VERSION = 1

# MACs per 16-bit lane per cycle.
_MACS_PER_LANE = {DataType.Int8: 2.0, DataType.FP16: 1.0, DataType.FP32: 0.5}


class ConfigError(ValueError):
    """Invalid or infeasible machine configuration."""


@dataclass(frozen=True)
class MachineConfig:
    tiles: int
    simd_bits: int = 512
    freq_hz: float = 2e9
    vrf_regs: int = 32
    l1_bytes: int = 16 * KiB
    llc_bytes: int = 32 * MiB
    mem_bw_bytes_per_s: float = 900 * GB
    mem_bw_efficiency: float = 0.60
    line_bytes: int = 64
    # None derives the rate from the SIMD width (one vector per cycle into the VRF,
    # half a vector per cycle into L1).
    l1_fill_bytes_per_cycle_per_tile: float | None = None
    llc_fill_bytes_per_cycle_per_tile: float | None = None
    hbm_stacks: int = 4
    barrier_cycles: int = 1000
    # Free speedup of the per-tile core and its fill paths (sensitivity studies only).
    core_speedup: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if self.l1_fill_bytes_per_cycle_per_tile is None:
            object.__setattr__(self, "l1_fill_bytes_per_cycle_per_tile", self.simd_bits / 8)
        if self.llc_fill_bytes_per_cycle_per_tile is None:
            object.__setattr__(self, "llc_fill_bytes_per_cycle_per_tile", self.simd_bits / 16)
        self.validate()

    def validate(self) -> None:
        if self.simd_bits not in (128, 256, 512):
            raise ConfigError(f"simd_bits must be 128, 256 or 512, got {self.simd_bits}")
        if self.tiles < 1:
            raise ConfigError("tiles must be >= 1")
        if self.vrf_regs < 8:
            raise ConfigError("vrf_regs must be >= 8")
        if not 0 < self.mem_bw_efficiency <= 1:
            raise ConfigError("mem_bw_efficiency must be in (0, 1]")
        if self.l1_fill_bytes_per_cycle_per_tile < self.simd_bits / 8:
            raise ConfigError("L1 fill rate must deliver at least one vector per cycle")
        if self.llc_fill_bytes_per_cycle_per_tile <= 0:
            raise ConfigError("LLC fill rate must be positive")
        if self.freq_hz <= 0 or self.mem_bw_bytes_per_s <= 0:
            raise ConfigError("frequency and memory bandwidth must be positive")
        if self.llc_bytes < 0 or self.l1_bytes <= 0 or self.line_bytes <= 0:
            raise ConfigError("cache sizes must be positive")
        if self.barrier_cycles < 0 or self.hbm_stacks < 0:
            raise ConfigError("barrier_cycles and hbm_stacks must be non-negative")
        if self.core_speedup < 1:
            raise ConfigError("core_speedup must be >= 1")

    @property
    def lanes_per_tile(self) -> int:
        return self.simd_bits // 16

    @property
    def effective_mem_bw(self) -> float:
        return self.mem_bw_bytes_per_s * self.mem_bw_efficiency

    def vector_elems(self, dtype: DataType) -> int:
        """Accumulator lanes per vector register (V)."""
        return self.simd_bits // dtype.accumulator_bits

    def with_overrides(self, **overrides: Any) -> MachineConfig:
        return apply_overrides(self, overrides)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class PeakRates:
    int8_ops_per_s: float
    fp16_ops_per_s: float
    lanes_per_tile: int


def peak_ops(cfg: MachineConfig, dtype: DataType) -> float:
    """Peak ops/s; a MAC counts as two ops."""
    macs = _MACS_PER_LANE[DataType.parse(dtype)]
    return cfg.tiles * cfg.lanes_per_tile * macs * 2 * cfg.freq_hz


def peak_rates(cfg: MachineConfig) -> PeakRates:
    return PeakRates(peak_ops(cfg, DataType.Int8), peak_ops(cfg, DataType.FP16),
                     cfg.lanes_per_tile)


def mesh_diameter(tiles: int) -> int:
    """Hop diameter of the most square 2-D mesh holding ``tiles`` tiles."""
    w = 2 ** math.ceil(math.log2(tiles) / 2) if tiles > 1 else 1
    h = math.ceil(tiles / w)
    return (w - 1) + (h - 1)


PRESETS: dict[str, MachineConfig] = {
    "base": MachineConfig(tiles=2048, simd_bits=512, freq_hz=2e9, llc_bytes=32 * MiB,
                          mem_bw_bytes_per_s=900 * GB, hbm_stacks=4, name="Base"),
    "riss": MachineConfig(tiles=1, simd_bits=512, freq_hz=1.2e9, llc_bytes=192 * KiB,
                          hbm_stacks=0, name="Riss"),
}


def preset(name: str) -> MachineConfig:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


_FIELD_TYPES = {f.name: f.type for f in fields(MachineConfig)}


def _coerce(name: str, value: Any) -> Any:
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config field {name!r}")
    if value is None or name == "name":
        return value
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        value = float(value)
    if name in ("tiles", "simd_bits", "vrf_regs", "l1_bytes", "llc_bytes", "line_bytes",
                "hbm_stacks", "barrier_cycles"):
        if float(value) != int(value):
            raise ConfigError(f"{name} must be an integer, got {value}")
        return int(value)
    return float(value)


def apply_overrides(cfg: MachineConfig, overrides: dict[str, Any]) -> MachineConfig:
    changes = {k: _coerce(k, v) for k, v in overrides.items() if v is not None}
    # Derived fill rates follow a changed SIMD width unless pinned explicitly.
    if "simd_bits" in changes:
        changes.setdefault("l1_fill_bytes_per_cycle_per_tile", None)
        changes.setdefault("llc_fill_bytes_per_cycle_per_tile", None)
    return replace(cfg, **changes)


def load_config(path: str | Path) -> MachineConfig:
    """Read a JSON config: optional ``preset`` base plus MachineConfig field overrides."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be an object")
    version = doc.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version}")
    base_name = doc.pop("preset", None)
    if base_name is not None:
        return apply_overrides(preset(base_name), doc)
    if "tiles" not in doc:
        raise ConfigError(f"{path}: needs 'tiles' or a 'preset'")
    return MachineConfig(**{k: _coerce(k, v) for k, v in doc.items()})
