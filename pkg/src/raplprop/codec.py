"""Bit-level encoding and decoding of the RAPL model-specific registers.

Field layouts follow the Intel SDM RAPL chapter:

* ``MSR_RAPL_POWER_UNIT``: power exponent in bits 3:0, energy exponent in
  bits 12:8, time exponent in bits 19:16.  Each unit is ``1 / 2**exp``.
* ``*_POWER_LIMIT`` (limit #1 only): power in bits 14:0, enable bit 15,
  clamp bit 16, time-window exponent ``y`` in bits 21:17 and fraction ``z``
  in bits 23:22, window = ``2**y * (1 + z/4) * time_unit``.
* ``*_POWER_INFO``: thermal spec power 14:0, minimum power 30:16, maximum
  power 46:32, maximum time window 53:48 (plain count of time units).
* ``*_ENERGY_STATUS``: 32-bit wrapping counter of energy units.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NegativeUncore, NonMonotonicTime, OutOfRange, Unrepresentable

POWER_FIELD_MASK = 0x7FFF
ENABLE_BIT = 1 << 15
CLAMP_BIT = 1 << 16
Y_SHIFT, Y_MASK = 17, 0x1F
Z_SHIFT, Z_MASK = 22, 0x3
LIMIT1_MASK = (1 << 24) - 1
COUNTER_MODULUS = 1 << 32


class DomainKind(str, enum.Enum):
    PACKAGE = "package"
    CORE = "core"
    DRAM = "dram"


@dataclass(frozen=True, order=True)
class DomainId:
    kind: DomainKind
    socket: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if self.socket < 0:
            raise ValueError(f"socket index must be non-negative, got {self.socket}")

    @property
    def label(self) -> str:
        return f"{self.kind.value}-{self.socket}"

    @classmethod
    def parse(cls, label: str) -> "DomainId":
        kind, _, socket = label.partition("-")
        return cls(DomainKind(kind), int(socket or 0))

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class RaplUnits:
    power_unit: float
    energy_unit: float
    time_unit: float


@dataclass(frozen=True)
class PowerLimit:
    bound: float
    time_window: float
    enabled: bool = True
    clamping: bool = False

    def __post_init__(self):
        if self.bound < 0:
            raise ValueError("power bound must be >= 0")
        if self.time_window <= 0:
            raise ValueError("time window must be > 0")


@dataclass(frozen=True)
class EnergyReading:
    raw_counter: int
    timestamp: float

    def __post_init__(self):
        if not 0 <= self.raw_counter < COUNTER_MODULUS:
            raise ValueError(f"energy counter {self.raw_counter:#x} is not a 32-bit value")


@dataclass(frozen=True)
class PowerInfo:
    max_time_window: float
    max_power: float
    min_power: float
    thermal_spec_power: float | None = None

    def __post_init__(self):
        if not 0 < self.min_power <= self.max_power:
            raise ValueError("power info requires 0 < min_power <= max_power")
        if self.max_time_window <= 0:
            raise ValueError("max_time_window must be > 0")


class LimitCheck(NamedTuple):
    ok: bool
    reason: str

    def __bool__(self):
        return self.ok


# -- units ---------------------------------------------------------------------

def decode_units(raw: int) -> RaplUnits:
    power_exp = raw & 0xF
    energy_exp = (raw >> 8) & 0x1F
    time_exp = (raw >> 16) & 0xF
    return RaplUnits(
        power_unit=1.0 / (1 << power_exp),
        energy_unit=1.0 / (1 << energy_exp),
        time_unit=1.0 / (1 << time_exp),
    )


def encode_units(power_exp: int, energy_exp: int, time_exp: int) -> int:
    if not (0 <= power_exp <= 0xF and 0 <= energy_exp <= 0x1F and 0 <= time_exp <= 0xF):
        raise Unrepresentable("unit exponent outside its field")
    return power_exp | (energy_exp << 8) | (time_exp << 16)


# -- time windows --------------------------------------------------------------

def _window_multiplier(y, z):
    return (2.0 ** y) * (1.0 + z / 4.0)


# (multiplier, y, z) sorted by multiplier; all 128 multipliers are distinct.
_WINDOW_GRID = sorted(
    (_window_multiplier(y, z), y, z) for y in range(Y_MASK + 1) for z in range(Z_MASK + 1)
)
_WINDOW_MULTS = [m for m, _, _ in _WINDOW_GRID]
_GRID_MULTS = np.array(_WINDOW_MULTS)
_GRID_Y = np.array([y for _, y, _ in _WINDOW_GRID], dtype=np.uint64)
_GRID_Z = np.array([z for _, _, z in _WINDOW_GRID], dtype=np.uint64)


def window_grid(units: RaplUnits) -> list[tuple[float, int, int]]:
    """All representable time windows as ``(seconds, y, z)``, ascending."""
    return [(m * units.time_unit, y, z) for m, y, z in _WINDOW_GRID]


def encode_time_window(window: float, units: RaplUnits) -> tuple[int, int]:
    """Nearest representable ``(y, z)``; exact ties go to the smaller window."""
    target = window / units.time_unit
    i = bisect.bisect_left(_WINDOW_MULTS, target)
    if i == 0:
        _, y, z = _WINDOW_GRID[0]
        return y, z
    if i == len(_WINDOW_MULTS):
        _, y, z = _WINDOW_GRID[-1]
        return y, z
    lo, hi = _WINDOW_GRID[i - 1], _WINDOW_GRID[i]
    pick = hi if hi[0] - target < target - lo[0] else lo
    return pick[1], pick[2]


def decode_time_window(y: int, z: int, units: RaplUnits) -> float:
    return _window_multiplier(y, z) * units.time_unit


# -- power limits --------------------------------------------------------------

def validate_limit(limit: PowerLimit, info: PowerInfo) -> LimitCheck:
    problems = []
    if limit.bound < info.min_power:
        problems.append(f"bound {limit.bound:g} W below minimum {info.min_power:g} W")
    if limit.bound > info.max_power:
        problems.append(f"bound {limit.bound:g} W above maximum {info.max_power:g} W")
    if limit.time_window > info.max_time_window:
        problems.append(
            f"window {limit.time_window * 1e3:.3f} ms exceeds maximum "
            f"{info.max_time_window * 1e3:.3f} ms"
        )
    if problems:
        return LimitCheck(False, "; ".join(problems))
    return LimitCheck(True, "ok")


def _power_field(bound, power_unit):
    return math.floor(bound / power_unit + 0.5)


def encode_power_limit(
    limit: PowerLimit, units: RaplUnits, info: PowerInfo | None = None, base: int = 0
) -> int:
    """Pack ``limit`` into the limit-#1 bits of a power-limit register.

    ``base`` supplies the bits outside limit #1 (limit #2, lock) so callers
    can do read-modify-write.  Disabled limits skip range validation.
    """
    if info is not None and limit.enabled:
        check = validate_limit(limit, info)
        if not check.ok:
            raise OutOfRange(check.reason)
    field = _power_field(limit.bound, units.power_unit)
    if field > POWER_FIELD_MASK:
        raise Unrepresentable(
            f"{limit.bound:g} W needs {field} power units; the field holds {POWER_FIELD_MASK}"
        )
    y, z = encode_time_window(limit.time_window, units)
    raw = base & ~LIMIT1_MASK
    raw |= field | (y << Y_SHIFT) | (z << Z_SHIFT)
    if limit.enabled:
        raw |= ENABLE_BIT
    if limit.clamping:
        raw |= CLAMP_BIT
    return raw


def decode_power_limit(raw: int, units: RaplUnits) -> PowerLimit:
    y = (raw >> Y_SHIFT) & Y_MASK
    z = (raw >> Z_SHIFT) & Z_MASK
    return PowerLimit(
        bound=(raw & POWER_FIELD_MASK) * units.power_unit,
        time_window=decode_time_window(y, z, units),
        enabled=bool(raw & ENABLE_BIT),
        clamping=bool(raw & CLAMP_BIT),
    )


def encode_power_limit_array(bounds, windows, units: RaplUnits, enabled=True, clamping=False):
    """Vectorised :func:`encode_power_limit` without range validation."""
    bounds = np.asarray(bounds, dtype=float)
    windows = np.asarray(windows, dtype=float)
    field = np.floor(bounds / units.power_unit + 0.5)
    if np.any(field > POWER_FIELD_MASK) or np.any(field < 0):
        raise Unrepresentable("power bound outside the 15-bit field")
    target = windows / units.time_unit
    hi = np.clip(np.searchsorted(_GRID_MULTS, target, side="left"), 1, len(_GRID_MULTS) - 1)
    lo = hi - 1
    pick = np.where(_GRID_MULTS[hi] - target < target - _GRID_MULTS[lo], hi, lo)
    pick = np.where(target <= _GRID_MULTS[0], 0, pick)
    pick = np.where(target >= _GRID_MULTS[-1], len(_GRID_MULTS) - 1, pick)
    raw = field.astype(np.uint64) | (_GRID_Y[pick] << np.uint64(Y_SHIFT)) | (
        _GRID_Z[pick] << np.uint64(Z_SHIFT)
    )
    raw = raw | np.where(np.asarray(enabled), np.uint64(ENABLE_BIT), np.uint64(0))
    raw = raw | np.where(np.asarray(clamping), np.uint64(CLAMP_BIT), np.uint64(0))
    return raw


def decode_power_limit_array(raw, units: RaplUnits):
    """Vectorised :func:`decode_power_limit`; returns ``(bound, window, enabled, clamping)`` arrays."""
    raw = np.asarray(raw, dtype=np.uint64)
    bound = (raw & np.uint64(POWER_FIELD_MASK)).astype(float) * units.power_unit
    y = ((raw >> np.uint64(Y_SHIFT)) & np.uint64(Y_MASK)).astype(float)
    z = ((raw >> np.uint64(Z_SHIFT)) & np.uint64(Z_MASK)).astype(float)
    window = np.exp2(y) * (1.0 + z / 4.0) * units.time_unit
    enabled = (raw & np.uint64(ENABLE_BIT)) != 0
    clamping = (raw & np.uint64(CLAMP_BIT)) != 0
    return bound, window, enabled, clamping


# -- power info ----------------------------------------------------------------

def decode_power_info(raw: int, units: RaplUnits) -> PowerInfo:
    pu = units.power_unit
    return PowerInfo(
        max_time_window=((raw >> 48) & 0x3F) * units.time_unit,
        max_power=((raw >> 32) & POWER_FIELD_MASK) * pu,
        min_power=((raw >> 16) & POWER_FIELD_MASK) * pu,
        thermal_spec_power=(raw & POWER_FIELD_MASK) * pu,
    )


def encode_power_info(info: PowerInfo, units: RaplUnits) -> int:
    pu = units.power_unit
    tdp = info.thermal_spec_power if info.thermal_spec_power is not None else info.max_power
    fields = [_power_field(v, pu) for v in (tdp, info.min_power, info.max_power)]
    mtw = math.floor(info.max_time_window / units.time_unit + 0.5)
    if any(f > POWER_FIELD_MASK for f in fields) or mtw > 0x3F:
        raise Unrepresentable("power info value outside its field")
    return fields[0] | (fields[1] << 16) | (fields[2] << 32) | (mtw << 48)


# -- energy --------------------------------------------------------------------

def energy_delta(prev: EnergyReading, next: EnergyReading, units: RaplUnits) -> float:
    """Joules between two readings, correcting a single 32-bit wrap."""
    if next.timestamp <= prev.timestamp:
        raise NonMonotonicTime(
            f"readings out of order: {prev.timestamp!r} then {next.timestamp!r}"
        )
    return ((next.raw_counter - prev.raw_counter) % COUNTER_MODULUS) * units.energy_unit


def derive_uncore(pkg_energy: float, pp0_energy: float) -> float:
    if pp0_energy > pkg_energy:
        raise NegativeUncore(
            f"core energy {pp0_energy:g} J exceeds package energy {pkg_energy:g} J"
        )
    return pkg_energy - pp0_energy


def describe_limit(limit: PowerLimit) -> str:
    flags = "enabled" if limit.enabled else "disabled"
    if limit.clamping:
        flags += ", clamp"
    return f"{limit.bound:.3f} W / {limit.time_window * 1e3:.4f} ms ({flags})"
