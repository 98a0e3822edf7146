"""Deterministic tick-level simulation of a two-socket server under RAPL caps.

Per socket the node has three metered components: *core* (PP0), *uncore*
(package minus core) and *dram*; a node-wide *rest of system* completes the
wall power.  Each tick:

* every component demands its calibrated mean, perturbed by a node-wide
  Gaussian factor (shared by all components, so sockets stay in phase);
* with probability ``spike_prob`` a node-wide spike replaces every metered
  component's demand by ``spike_level`` times its peak.  The non-spike base
  level is lowered so the long-run average still equals the calibrated mean;
* capped domains are throttled by the sliding-window kernels; the fraction
  of activity that survives scales the work done in that tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..codec import DomainId, DomainKind, PowerLimit
from .curves import mean_power
from .profile import WorkloadKind, WorkloadProfile

DEFAULT_TICK = 0.001
MIN_HISTORY = 64


def ticks_for(duration: float, tick: float) -> int:
    return max(1, int(round(duration / tick)))


def window_ticks(time_window: float, tick: float) -> int:
    return max(1, math.ceil(time_window / tick - 1e-9))


def _check_load(load):
    if not 0.0 <= load <= 1.0:
        raise ValueError(f"load must lie in [0, 1], got {load}")


def socket_means(profile: WorkloadProfile, load: float) -> dict[str, float]:
    """Per-socket mean power of each metered component, plus node-wide rest."""
    n = profile.sockets
    pkg = mean_power(profile.curves["package"], load) / n
    core = mean_power(profile.curves["core"], load) / n
    return {
        "core": core,
        "uncore": max(pkg - core, 0.0),
        "dram": mean_power(profile.curves["dram"], load) / n,
        "rest": mean_power(profile.curves["rest_of_system"], load),
    }


def socket_peaks(profile: WorkloadProfile) -> dict[str, float]:
    n = profile.sockets
    pkg = profile.curves["package"].peak_power / n
    core = profile.curves["core"].peak_power / n
    return {"core": core, "uncore": pkg - core, "dram": profile.curves["dram"].peak_power / n}


@dataclass
class Demand:
    """Demanded power per tick: metered components shaped ``(sockets, n)``, rest ``(n,)``."""

    core: np.ndarray
    uncore: np.ndarray
    dram: np.ndarray
    rest: np.ndarray

    @property
    def n(self) -> int:
        return len(self.rest)


class NodeState:
    """Mutable simulation state: RNG streams, active caps, window history, clock.

    Seeding with ``load`` derives independent streams per load level, so the
    same seed reproduces a level's demand regardless of run order.
    """

    def __init__(self, profile: WorkloadProfile, seed: int = 0, load: float | None = None,
                 tick: float = DEFAULT_TICK, caps=None):
        if tick <= 0:
            raise ValueError("tick must be > 0")
        key = () if load is None else (int(round(load * 1_000_000)),)
        noise_ss, spike_ss = np.random.SeedSequence(seed, spawn_key=key).spawn(2)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.spike_rng = np.random.default_rng(spike_ss)
        self.tick = tick
        self.sockets = profile.sockets
        self.clock = 0.0
        self.caps: dict[DomainId, PowerLimit] = {}
        self.history = {d: np.zeros(MIN_HISTORY) for d in self.domains}
        self.throttled_time = {d: 0.0 for d in self.domains}
        for domain, limit in (caps or {}).items():
            self.set_cap(domain, limit)

    @property
    def domains(self) -> list[DomainId]:
        return [DomainId(k, s) for s in range(self.sockets) for k in DomainKind]

    def set_cap(self, domain: DomainId, limit: PowerLimit):
        if domain not in self.history:
            raise KeyError(f"node has no domain {domain}")
        need = window_ticks(limit.time_window, self.tick) - 1
        hist = self.history[domain]
        if need > len(hist):
            self.history[domain] = np.concatenate([np.zeros(need - len(hist)), hist])
        self.caps[domain] = limit

    def clear_cap(self, domain: DomainId):
        self.caps.pop(domain, None)

    def cap_params(self, domain: DomainId) -> tuple[float, int]:
        limit = self.caps.get(domain)
        if limit is None or not limit.enabled:
            return math.inf, 1
        return limit.bound, window_ticks(limit.time_window, self.tick)


def draw_demand(state: NodeState, profile: WorkloadProfile, load: float, n: int) -> Demand:
    _check_load(load)
    z = state.noise_rng.standard_normal(n)
    spikes = state.spike_rng.random(n) < profile.spike_prob
    p = profile.spike_prob
    means = socket_means(profile, load)
    peaks = socket_peaks(profile)
    out = {}
    for comp in ("core", "uncore", "dram"):
        m = means[comp]
        spike_w = profile.spike_level * peaks[comp]
        base = (m - p * spike_w) / (1.0 - p) if p < 1.0 else m
        d = np.maximum(max(base, 0.0) * (1.0 + profile.noise_for(comp) * z), 0.0)
        d[spikes] = spike_w
        out[comp] = np.tile(d, (state.sockets, 1))
    rest = np.maximum(means["rest"] * (1.0 + profile.noise_for("rest_of_system") * z), 0.0)
    return Demand(out["core"], out["uncore"], out["dram"], rest)


@dataclass
class TickBlock:
    """Delivered power per tick after cap enforcement."""

    core: np.ndarray
    uncore: np.ndarray
    dram: np.ndarray
    rest: np.ndarray
    work_scale: np.ndarray
    tick: float
    throttled_ticks: dict[DomainId, int] = field(default_factory=dict)

    @property
    def package(self) -> np.ndarray:
        return self.core + self.uncore

    @property
    def full_system(self) -> np.ndarray:
        return self.package.sum(axis=0) + self.dram.sum(axis=0) + self.rest

    def averages(self) -> dict[str, float]:
        """Mean power of every key in :meth:`series`, from per-socket means."""
        core = self.core.mean(axis=1)
        uncore = self.uncore.mean(axis=1)
        dram = self.dram.mean(axis=1)
        out = {}
        for s in range(len(core)):
            out[f"package-{s}"] = float(core[s] + uncore[s])
            out[f"core-{s}"] = float(core[s])
            out[f"uncore-{s}"] = float(uncore[s])
            out[f"dram-{s}"] = float(dram[s])
        out["package"] = float(core.sum() + uncore.sum())
        out["core"] = float(core.sum())
        out["uncore"] = float(uncore.sum())
        out["dram"] = float(dram.sum())
        out["rest_of_system"] = float(self.rest.mean())
        out["full_system"] = out["package"] + out["dram"] + out["rest_of_system"]
        return out

    def series(self) -> dict[str, np.ndarray]:
        """Per-tick power for every per-socket domain and every aggregate subject."""
        out = {}
        pkg = self.package
        for s in range(self.core.shape[0]):
            out[f"package-{s}"] = pkg[s]
            out[f"core-{s}"] = self.core[s]
            out[f"uncore-{s}"] = self.uncore[s]
            out[f"dram-{s}"] = self.dram[s]
        out["package"] = pkg.sum(axis=0)
        out["core"] = self.core.sum(axis=0)
        out["uncore"] = self.uncore.sum(axis=0)
        out["dram"] = self.dram.sum(axis=0)
        out["rest_of_system"] = self.rest
        out["full_system"] = self.full_system
        return out


def enforce(state: NodeState, demand: Demand) -> TickBlock:
    """Apply ``state``'s caps to ``demand``, advancing history and clock."""
    n = demand.n
    core = np.empty_like(demand.core)
    uncore = np.empty_like(demand.uncore)
    dram = np.empty_like(demand.dram)
    work = np.ones(n)
    throttled = {}
    for s in range(state.sockets):
        core_id = DomainId(DomainKind.CORE, s)
        pkg_id = DomainId(DomainKind.PACKAGE, s)
        dram_id = DomainId(DomainKind.DRAM, s)
        cb, cw = state.cap_params(core_id)
        pb, pw = state.cap_params(pkg_id)
        db, dw = state.cap_params(dram_id)
        core[s], uncore[s], cscale, pscale, state.history[core_id], state.history[pkg_id] = (
            kernels.enforce_nested(
                demand.core[s], demand.uncore[s], cb, cw, pb, pw,
                state.history[core_id], state.history[pkg_id],
            )
        )
        dram[s], dscale, state.history[dram_id] = kernels.enforce_single(
            demand.dram[s], db, dw, state.history[dram_id]
        )
        for domain, bound, scale in ((core_id, cb, cscale), (pkg_id, pb, pscale), (dram_id, db, dscale)):
            if math.isinf(bound):
                continue
            np.minimum(work, scale, out=work)
            count = int(np.count_nonzero(scale < 1.0))
            throttled[domain] = count
            state.throttled_time[domain] += count * state.tick
    state.clock += n * state.tick
    return TickBlock(core, uncore, dram, demand.rest, work, state.tick, throttled)


def advance(state: NodeState, profile: WorkloadProfile, load: float, n: int) -> TickBlock:
    return enforce(state, draw_demand(state, profile, load, n))


def step(state: NodeState, profile: WorkloadProfile, load: float):
    """Advance one tick; returns ``(instant power by subject, work done in ops)``."""
    block = advance(state, profile, load, 1)
    powers = {k: float(v[0]) for k, v in block.series().items()}
    work = profile.max_performance * load * state.tick * float(block.work_scale[0])
    return powers, work


@dataclass(frozen=True)
class LevelResult:
    load: float
    duration: float
    avg_power: dict[str, float]
    work_done: float
    achieved_performance: float
    max_performance: float
    latency_p95: float | None = None
    latency_p99: float | None = None
    throttled_time: float = 0.0
    throttled_by_domain: dict[str, float] = field(default_factory=dict)

    @property
    def throughput(self) -> float:
        return self.work_done / self.duration


def summarize(profile: WorkloadProfile, block: TickBlock, load: float) -> LevelResult:
    n = len(block.work_scale)
    duration = n * block.tick
    avg = block.averages()
    total_scale = float(block.work_scale.sum())
    work = profile.max_performance * load * block.tick * total_scale
    achieved = total_scale / n if load > 0 else 1.0
    p95 = p99 = None
    if profile.kind is WorkloadKind.SESSION:
        with np.errstate(divide="ignore"):
            latency = profile.base_latency / block.work_scale
        p95, p99 = (float(q) for q in np.quantile(latency, [0.95, 0.99]))
    return LevelResult(
        load=load,
        duration=duration,
        avg_power=avg,
        work_done=work,
        achieved_performance=achieved,
        max_performance=profile.max_performance,
        latency_p95=p95,
        latency_p99=p99,
        throttled_time=float(np.count_nonzero(block.work_scale < 1.0)) * block.tick,
        throttled_by_domain={d.label: c * block.tick for d, c in block.throttled_ticks.items()},
    )


def level_demand(profile: WorkloadProfile, load: float, duration: float, seed: int = 0,
                 tick: float = DEFAULT_TICK) -> Demand:
    """The demand trajectory :func:`run_level` sees for ``(seed, load, duration)``."""
    state = NodeState(profile, seed=seed, load=load, tick=tick)
    return draw_demand(state, profile, load, ticks_for(duration, tick))


def evaluate(profile: WorkloadProfile, demand: Demand, load: float, caps=None,
             tick: float = DEFAULT_TICK) -> LevelResult:
    """Run a fixed demand trajectory under ``caps`` from a fresh (empty-history) state."""
    state = NodeState(profile, tick=tick, caps=caps)
    return summarize(profile, enforce(state, demand), load)


def run_level(profile: WorkloadProfile, load: float, duration: float, caps=None, seed: int = 0,
              tick: float = DEFAULT_TICK) -> LevelResult:
    if duration < 1.0:
        raise ValueError("a level needs at least 1 s of virtual time")
    return evaluate(profile, level_demand(profile, load, duration, seed, tick), load, caps, tick)
