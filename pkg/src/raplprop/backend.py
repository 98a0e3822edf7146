"""Measurement and control backends: a simulated node and the Linux MSR device files.

Both expose the same surface: energy readings, power-limit programming,
interval average power and periodic power traces.  Only the simulator can
drive a workload at a load level (``run_level``); on hardware the benchmark
runs externally.
"""

from __future__ import annotations

import csv
import errno
import math
import os
import stat
import sys
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .codec import (
    COUNTER_MODULUS,
    DomainId,
    DomainKind,
    EnergyReading,
    PowerInfo,
    PowerLimit,
    RaplUnits,
    decode_power_info,
    decode_power_limit,
    decode_units,
    describe_limit,
    encode_power_info,
    encode_power_limit,
    energy_delta,
    validate_limit,
)
from .errors import BackendFailure, DomainUnavailable, OutOfRange, PermissionDenied
from .node_model import simulate
from .node_model.profile import WorkloadProfile

FULL_SYSTEM = "full_system"
UNCORE = "uncore"
AGGREGATES = ("package", "core", "uncore", "dram", FULL_SYSTEM)

MSR_RAPL_POWER_UNIT = 0x606
MSR_ADDRESSES = {
    DomainKind.PACKAGE: {"limit": 0x610, "energy": 0x611, "perf": 0x613, "info": 0x614},
    DomainKind.DRAM: {"limit": 0x618, "energy": 0x619, "perf": 0x61B, "info": 0x61C},
    DomainKind.CORE: {"limit": 0x638, "energy": 0x639, "perf": 0x63B, "info": None},
}

DEFAULT_UNITS_RAW = 0xA1003
DEFAULT_RESOLUTION = 0.05
# Per-socket ranges of the modelled server.
DEFAULT_POWER_INFO = {
    DomainKind.PACKAGE: PowerInfo(max_time_window=47 / 1024, max_power=180.0, min_power=51.0),
    DomainKind.DRAM: PowerInfo(max_time_window=40 / 1024, max_power=75.0, min_power=15.0),
}


@dataclass(frozen=True)
class BackendCapabilities:
    domains: tuple[DomainId, ...]
    power_info: Mapping[DomainId, PowerInfo]
    units: RaplUnits
    is_simulated: bool
    sockets: int

    def limit_info(self, domain: DomainId) -> PowerInfo:
        """Range a limit on ``domain`` is validated against.

        Core has no range register; it borrows the package's maximum power and
        window, with the floor at one power unit (the package minimum applies
        to the whole socket, not to the cores alone).
        """
        if domain.kind is DomainKind.CORE:
            pkg = self.power_info.get(DomainId(DomainKind.PACKAGE, domain.socket))
            if pkg is None:
                raise DomainUnavailable(f"no package power info for socket {domain.socket}")
            return PowerInfo(pkg.max_time_window, pkg.max_power, self.units.power_unit)
        try:
            return self.power_info[domain]
        except KeyError:
            raise DomainUnavailable(f"no power info for {domain}") from None

    def max_power(self, subject: str) -> float:
        """Node-wide maximum limit for a domain kind (the CDF normaliser)."""
        kind = DomainKind.PACKAGE if subject in ("core", "uncore") else DomainKind(subject)
        return sum(i.max_power for d, i in self.power_info.items() if d.kind is kind)


@dataclass(frozen=True)
class PowerTrace:
    subject: str
    timestamps: np.ndarray
    powers: np.ndarray
    resolution: float
    clock: str = "virtual"
    clamped: int = 0

    def __len__(self):
        return len(self.timestamps)

    def rows(self):
        for t, p in zip(self.timestamps.tolist(), self.powers.tolist()):
            yield t, self.subject, p


def write_traces_csv(traces: Iterable[PowerTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_s", "domain", "power_w"])
        for tr in traces:
            for t, d, p in tr.rows():
                w.writerow([repr(t), d, repr(p)])


def read_traces_csv(path) -> dict[str, PowerTrace]:
    cols: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["timestamp_s", "domain", "power_w"]:
            raise ValueError(f"{path}: expected header timestamp_s,domain,power_w")
        for row in reader:
            ts, ps = cols.setdefault(row["domain"], ([], []))
            ts.append(float(row["timestamp_s"]))
            ps.append(float(row["power_w"]))
    out = {}
    for name, (ts, ps) in cols.items():
        ts = np.array(ts)
        res = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0
        out[name] = PowerTrace(name, ts, np.array(ps), res)
    return out


class Backend(ABC):
    """Common surface of the simulated and hardware backends."""

    capabilities: BackendCapabilities

    def _lookup(self, domain) -> DomainId:
        if isinstance(domain, str):
            domain = DomainId.parse(domain)
        if domain not in self.capabilities.domains:
            raise DomainUnavailable(f"domain {domain} is not available on this backend")
        return domain

    def check_limit(self, domain: DomainId, limit: PowerLimit) -> None:
        if not limit.enabled:
            return
        check = validate_limit(limit, self.capabilities.limit_info(domain))
        if not check.ok:
            raise OutOfRange(f"{domain}: {check.reason}")

    @abstractmethod
    def read_energy(self, domain) -> EnergyReading: ...

    @abstractmethod
    def set_limit(self, domain, limit: PowerLimit) -> int: ...

    @abstractmethod
    def clear_limit(self, domain) -> None: ...

    @abstractmethod
    def get_limit(self, domain) -> PowerLimit: ...

    @abstractmethod
    def read_register(self, socket: int, address: int) -> int: ...

    @abstractmethod
    def _wait(self, seconds: float) -> None:
        """Let ``seconds`` pass (virtual or wall time)."""

    @abstractmethod
    def _now(self) -> float: ...

    clock_kind = "monotonic"

    def clear_all_limits(self) -> None:
        for d in self.capabilities.domains:
            self.clear_limit(d)

    def average_power(self, domain, interval: float) -> float:
        if interval <= 0:
            raise ValueError("interval must be > 0")
        domain = self._lookup(domain)
        r0 = self.read_energy(domain)
        self._wait(interval)
        r1 = self.read_energy(domain)
        return energy_delta(r0, r1, self.capabilities.units) / (r1.timestamp - r0.timestamp)

    # -- tracing -------------------------------------------------------------

    def _resolve_subject(self, subject) -> list[DomainId]:
        """Per-socket domains whose energies sum to ``subject``."""
        if isinstance(subject, DomainId):
            return [self._lookup(subject)]
        if subject in ("package", "core", "dram"):
            kind = DomainKind(subject)
            return [d for d in self.capabilities.domains if d.kind is kind]
        return [self._lookup(subject)]

    def _full_system_energy(self) -> float:
        raise DomainUnavailable("full-system power needs an external meter; not available here")

    def _snapshot(self, plan) -> tuple[float, dict]:
        t = self._now()
        counters = {d: self.read_energy(d) for d in plan["rapl"]}
        fs = self._full_system_energy() if plan["full"] else None
        return t, {"counters": counters, "full": fs}

    def sample_trace(
        self,
        subjects,
        duration: float,
        resolution: float = DEFAULT_RESOLUTION,
        on_sample: Callable[[int, float], None] | None = None,
    ) -> dict[str, PowerTrace]:
        """Sample power of each subject every ``resolution`` seconds for ``duration``.

        Subjects are per-socket labels (``"package-0"``, ``"uncore-1"``) or
        node-wide names (``"package"``, ``"uncore"``, ``"full_system"``).
        ``on_sample(i, t)`` runs between samples, outside the register lock,
        so a controller can change limits mid-trace.
        """
        if resolution < 1e-3:
            raise ValueError("resolution must be >= 1 ms (energy counter update rate)")
        if duration < resolution:
            raise ValueError("duration shorter than one sample")
        names = [s.label if isinstance(s, DomainId) else str(s) for s in subjects]
        parts: dict[str, dict[str, list[DomainId]]] = {}
        rapl: set[DomainId] = set()
        full = False
        for name in names:
            if name == FULL_SYSTEM:
                full = True
                self._full_system_energy()
                continue
            kind, _, sock = name.partition("-")
            if kind == UNCORE:
                pk = self._resolve_subject("package" + ("-" + sock if sock else ""))
                co = self._resolve_subject("core" + ("-" + sock if sock else ""))
                parts[name] = {"plus": pk, "minus": co}
            else:
                parts[name] = {"plus": self._resolve_subject(name), "minus": []}
            rapl.update(parts[name]["plus"], parts[name]["minus"])
        plan = {"rapl": sorted(rapl), "full": full}
        units = self.capabilities.units
        n = int(round(duration / resolution))
        ts = np.empty(n)
        vals = {name: np.empty(n) for name in names}
        clamped = {name: 0 for name in names}
        prev_t, prev = self._snapshot(plan)
        for i in range(n):
            self._wait(resolution)
            t, cur = self._snapshot(plan)
            dt = t - prev_t
            ts[i] = t
            for name in names:
                if name == FULL_SYSTEM:
                    vals[name][i] = (cur["full"] - prev["full"]) / dt
                    continue
                e = sum(energy_delta(prev["counters"][d], cur["counters"][d], units) for d in parts[name]["plus"])
                e -= sum(energy_delta(prev["counters"][d], cur["counters"][d], units) for d in parts[name]["minus"])
                p = e / dt
                if p < 0:
                    clamped[name] += 1
                    p = 0.0
                vals[name][i] = p
            prev_t, prev = t, cur
            if on_sample is not None:
                on_sample(i, t)
        return {
            name: PowerTrace(name, ts.copy(), vals[name], resolution, self.clock_kind, clamped[name])
            for name in names
        }

    def run_level(self, load: float, duration: float, caps=None) -> simulate.LevelResult:
        raise BackendFailure(
            f"{type(self).__name__} cannot drive load levels; run the benchmark externally"
        )

    def settle(self, load: float, duration: float) -> None:
        self._wait(duration)


def default_register_file(sockets: int = 2, units_raw: int = DEFAULT_UNITS_RAW) -> dict:
    """Register images of the modelled server at power-on (no limits enabled)."""
    units = decode_units(units_raw)
    regs = {}
    for s in range(sockets):
        regs[(s, MSR_RAPL_POWER_UNIT)] = units_raw
        for kind, info in DEFAULT_POWER_INFO.items():
            regs[(s, MSR_ADDRESSES[kind]["info"])] = encode_power_info(info, units)
        for kind in DomainKind:
            regs[(s, MSR_ADDRESSES[kind]["limit"])] = 0
    return regs


def _capabilities_from_registers(read, sockets: int, domains, simulated: bool) -> BackendCapabilities:
    units = decode_units(read(0, MSR_RAPL_POWER_UNIT))
    info = {}
    for d in domains:
        addr = MSR_ADDRESSES[d.kind]["info"]
        if addr is not None:
            info[d] = decode_power_info(read(d.socket, addr), units)
    return BackendCapabilities(tuple(domains), info, units, simulated, sockets)


class SimBackend(Backend):
    """Backend over the simulated node with a virtual clock.

    Energy is tracked exactly per domain; counters expose it quantised to
    energy units and wrapped at 32 bits.  ``counter_offset`` (in energy
    units) pre-loads the counters, e.g. to force a wrap early in a test.
    """

    clock_kind = "virtual"

    def __init__(self, profile: WorkloadProfile, seed: int = 0, tick: float = simulate.DEFAULT_TICK,
                 units_raw: int = DEFAULT_UNITS_RAW, counter_offset: int = 0):
        self.profile = profile
        self.seed = seed
        self.tick = tick
        self.counter_offset = int(counter_offset)
        self.registers = default_register_file(profile.sockets, units_raw)
        domains = [DomainId(k, s) for s in range(profile.sockets) for k in DomainKind]
        self.capabilities = _capabilities_from_registers(
            lambda s, a: self.registers[(s, a)], profile.sockets, domains, True
        )
        self._lock = threading.RLock()
        self._state = simulate.NodeState(profile, seed=seed, tick=tick)
        self._load = 0.0
        self.ledger = {d: 0.0 for d in domains}
        self.ledger[FULL_SYSTEM] = 0.0
        self._demand_cache: dict[tuple[float, int], simulate.Demand] = {}

    # -- registers -----------------------------------------------------------

    def read_register(self, socket: int, address: int) -> int:
        try:
            return self.registers[(socket, address)]
        except KeyError:
            raise DomainUnavailable(f"socket {socket} has no register {address:#x}") from None

    def get_limit(self, domain) -> PowerLimit:
        domain = self._lookup(domain)
        raw = self.registers[(domain.socket, MSR_ADDRESSES[domain.kind]["limit"])]
        return decode_power_limit(raw, self.capabilities.units)

    def set_limit(self, domain, limit: PowerLimit) -> int:
        domain = self._lookup(domain)
        self.check_limit(domain, limit)
        key = (domain.socket, MSR_ADDRESSES[domain.kind]["limit"])
        with self._lock:
            raw = encode_power_limit(limit, self.capabilities.units, base=self.registers[key])
            self.registers[key] = raw
            effective = decode_power_limit(raw, self.capabilities.units)
            if effective.enabled:
                self._state.set_cap(domain, effective)
            else:
                self._state.clear_cap(domain)
        return raw

    def clear_limit(self, domain) -> None:
        domain = self._lookup(domain)
        key = (domain.socket, MSR_ADDRESSES[domain.kind]["limit"])
        with self._lock:
            self.registers[key] &= ~(1 << 15)
            self._state.clear_cap(domain)

    def active_caps(self) -> dict[DomainId, PowerLimit]:
        return {d: l for d, l in self._state.caps.items() if l.enabled}

    # -- time and energy -----------------------------------------------------

    def set_load(self, load: float) -> None:
        if not 0.0 <= load <= 1.0:
            raise ValueError("load must lie in [0, 1]")
        self._load = load

    @property
    def clock(self) -> float:
        return self._state.clock

    def _now(self) -> float:
        return self._state.clock

    def _credit(self, block: simulate.TickBlock) -> None:
        dt = block.tick
        for s in range(self.profile.sockets):
            self.ledger[DomainId(DomainKind.PACKAGE, s)] += float(block.package[s].sum()) * dt
            self.ledger[DomainId(DomainKind.CORE, s)] += float(block.core[s].sum()) * dt
            self.ledger[DomainId(DomainKind.DRAM, s)] += float(block.dram[s].sum()) * dt
        self.ledger[FULL_SYSTEM] += float(block.full_system.sum()) * dt

    def advance(self, duration: float, load: float | None = None) -> None:
        """Run the live node for ``duration`` virtual seconds at ``load``."""
        n = simulate.ticks_for(duration, self.tick)
        with self._lock:
            block = simulate.advance(self._state, self.profile, self._load if load is None else load, n)
            self._credit(block)

    def _wait(self, seconds: float) -> None:
        self.advance(seconds)

    def settle(self, load: float, duration: float) -> None:
        self.advance(duration, load)

    def exact_energy(self, domain) -> float:
        if domain == FULL_SYSTEM:
            return self.ledger[FULL_SYSTEM]
        return self.ledger[self._lookup(domain)]

    def _full_system_energy(self) -> float:
        return self.ledger[FULL_SYSTEM]

    def read_energy(self, domain) -> EnergyReading:
        domain = self._lookup(domain)
        with self._lock:
            units = math.floor(self.ledger[domain] / self.capabilities.units.energy_unit)
            return EnergyReading((units + self.counter_offset) % COUNTER_MODULUS, self._state.clock)

    # -- level runs ----------------------------------------------------------

    def _quantise(self, caps: Mapping) -> dict[DomainId, PowerLimit]:
        out = {}
        for domain, limit in caps.items():
            domain = self._lookup(domain)
            self.check_limit(domain, limit)
            raw = encode_power_limit(limit, self.capabilities.units)
            out[domain] = decode_power_limit(raw, self.capabilities.units)
        return out

    def demand(self, load: float, duration: float) -> simulate.Demand:
        n = simulate.ticks_for(duration, self.tick)
        key = (load, n)
        if key not in self._demand_cache:
            self._demand_cache[key] = simulate.level_demand(self.profile, load, duration, self.seed, self.tick)
        return self._demand_cache[key]

    def run_level(self, load: float, duration: float, caps=None) -> simulate.LevelResult:
        """Measure one level from a clean window history.

        ``caps`` (validated and quantised like a register write) replaces the
        currently programmed limits for this run; ``None`` uses them.  The
        result depends only on ``(seed, load, caps, duration)``.
        """
        if duration < 1.0:
            raise ValueError("a level needs at least 1 s of virtual time")
        with self._lock:
            effective = self.active_caps() if caps is None else self._quantise(caps)
            result = simulate.evaluate(self.profile, self.demand(load, duration), load, effective, self.tick)
            for d in self.capabilities.domains:
                self.ledger[d] += result.avg_power[d.label] * result.duration
            self.ledger[FULL_SYSTEM] += result.avg_power[FULL_SYSTEM] * result.duration
            self._state.clock += result.duration
        return result

    def clone(self, seed: int) -> "SimBackend":
        return SimBackend(self.profile, seed=seed, tick=self.tick,
                          units_raw=self.registers[(0, MSR_RAPL_POWER_UNIT)])


class MsrBackend(Backend):
    """Linux ``/dev/cpu/N/msr`` backend.

    ``RAPLPROP_MSR_ROOT`` relocates the device tree and ``RAPLPROP_SYSFS_CPU``
    the topology tree used to map CPUs to sockets.  A regular file standing in
    for a device (a test fixture) stores register ``a`` at byte ``8 * a``,
    since a plain file cannot hold overlapping 8-byte registers.
    With ``dry_run`` writes are printed (and recorded in ``writes``) instead
    of performed, and an unreadable device tree falls back to the modelled
    server's power-on registers.
    """

    def __init__(self, root: str | os.PathLike | None = None, dry_run: bool = False, out=None):
        self.root = Path(root or os.environ.get("RAPLPROP_MSR_ROOT", "/dev/cpu"))
        self.dry_run = dry_run
        self.out = out or sys.stdout
        self.writes: list[tuple[int, int, int, str]] = []
        self._lock = threading.Lock()
        self._fds: dict[int, int] = {}
        self._stride: dict[int, int] = {}
        self._fallback: dict | None = None
        try:
            self.cpus = self._socket_cpus()
            domains = self._probe()
        except (PermissionDenied, DomainUnavailable):
            if not dry_run:
                raise
            self._fallback = default_register_file()
            self.cpus = {0: 0, 1: 1}
            domains = [DomainId(k, s) for s in self.cpus for k in DomainKind]
            print("# registers unreadable; dry run uses power-on defaults", file=self.out)
        self.capabilities = _capabilities_from_registers(
            self.read_register, len(self.cpus), domains, False
        )

    def _socket_cpus(self) -> dict[int, int]:
        if not self.root.is_dir():
            raise DomainUnavailable(f"no MSR device tree at {self.root} (is the msr module loaded?)")
        cpus = sorted(int(p.name) for p in self.root.iterdir() if p.name.isdigit() and (p / "msr").exists())
        if not cpus:
            raise DomainUnavailable(f"no msr devices under {self.root}")
        sysfs = Path(os.environ.get("RAPLPROP_SYSFS_CPU", "/sys/devices/system/cpu"))
        sockets: dict[int, int] = {}
        for cpu in cpus:
            f = sysfs / f"cpu{cpu}" / "topology" / "physical_package_id"
            sock = int(f.read_text()) if f.exists() else 0
            sockets.setdefault(sock, cpu)
        return dict(sorted(sockets.items()))

    def _fd(self, cpu: int) -> int:
        if cpu not in self._fds:
            path = self.root / str(cpu) / "msr"
            flags = os.O_RDONLY if self.dry_run else os.O_RDWR
            try:
                self._fds[cpu] = os.open(path, flags)
                self._stride[cpu] = 1 if stat.S_ISCHR(os.fstat(self._fds[cpu]).st_mode) else 8
            except PermissionError as exc:
                raise PermissionDenied(f"{path}: {exc.strerror}; run as root or grant CAP_SYS_RAWIO") from None
            except FileNotFoundError:
                raise DomainUnavailable(f"{path} does not exist") from None
        return self._fds[cpu]

    def read_register(self, socket: int, address: int) -> int:
        if self._fallback is not None:
            try:
                return self._fallback[(socket, address)]
            except KeyError:
                raise DomainUnavailable(f"socket {socket} has no register {address:#x}") from None
        with self._lock:
            cpu = self.cpus[socket]
            fd = self._fd(cpu)
            try:
                data = os.pread(fd, 8, address * self._stride[cpu])
            except OSError as exc:
                raise DomainUnavailable(f"register {address:#x} unreadable: {exc.strerror}") from None
        if len(data) != 8:
            raise DomainUnavailable(f"register {address:#x} unreadable on socket {socket}")
        return int.from_bytes(data, "little")

    def _write_register(self, socket: int, address: int, raw: int, note: str) -> None:
        self.writes.append((socket, address, raw, note))
        if self.dry_run:
            print(f"cpu{self.cpus[socket]} msr {address:#05x} <- {raw:#018x}  {note}", file=self.out)
            return
        with self._lock:
            cpu = self.cpus[socket]
            fd = self._fd(cpu)
            try:
                os.pwrite(fd, raw.to_bytes(8, "little"), address * self._stride[cpu])
            except OSError as exc:
                if exc.errno in (errno.EPERM, errno.EACCES):
                    raise PermissionDenied(f"writing {address:#x}: {exc.strerror}") from None
                raise BackendFailure(f"writing {address:#x}: {exc.strerror}") from None

    def _probe(self) -> list[DomainId]:
        self.read_register(0, MSR_RAPL_POWER_UNIT)
        found = []
        for s in self.cpus:
            for kind in DomainKind:
                try:
                    self.read_register(s, MSR_ADDRESSES[kind]["energy"])
                except DomainUnavailable:
                    continue
                found.append(DomainId(kind, s))
        return found

    def close(self) -> None:
        for fd in self._fds.values():
            os.close(fd)
        self._fds.clear()

    def _now(self) -> float:
        return time.monotonic()

    def _wait(self, seconds: float) -> None:
        time.sleep(seconds)

    def read_energy(self, domain) -> EnergyReading:
        domain = self._lookup(domain)
        raw = self.read_register(domain.socket, MSR_ADDRESSES[domain.kind]["energy"])
        return EnergyReading(raw & (COUNTER_MODULUS - 1), time.monotonic())

    def get_limit(self, domain) -> PowerLimit:
        domain = self._lookup(domain)
        raw = self.read_register(domain.socket, MSR_ADDRESSES[domain.kind]["limit"])
        return decode_power_limit(raw, self.capabilities.units)

    def set_limit(self, domain, limit: PowerLimit) -> int:
        domain = self._lookup(domain)
        self.check_limit(domain, limit)
        addr = MSR_ADDRESSES[domain.kind]["limit"]
        base = self.read_register(domain.socket, addr)
        raw = encode_power_limit(limit, self.capabilities.units, base=base)
        decoded = decode_power_limit(raw, self.capabilities.units)
        self._write_register(domain.socket, addr, raw, f"{domain} {describe_limit(decoded)}")
        return raw

    def clear_limit(self, domain) -> None:
        domain = self._lookup(domain)
        addr = MSR_ADDRESSES[domain.kind]["limit"]
        raw = self.read_register(domain.socket, addr) & ~(1 << 15)
        self._write_register(domain.socket, addr, raw, f"{domain} limit disabled")


def open_backend(kind: str, profile: WorkloadProfile | None = None, seed: int = 0,
                 dry_run: bool = False) -> Backend:
    if kind == "sim":
        if profile is None:
            raise ValueError("the sim backend needs a workload profile")
        return SimBackend(profile, seed=seed)
    if kind == "msr":
        return MsrBackend(dry_run=dry_run)
    raise ValueError(f"unknown backend {kind!r}")
