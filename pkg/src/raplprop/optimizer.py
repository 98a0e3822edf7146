"""Power-cap search: find the deepest cap that costs no performance.

Three policies cap the cores, the memory, or both.  For each domain the
candidate system-wide bounds are the vanilla average and then 2 W steps down
to 28 W below it; bounds are split evenly across sockets and programmed
with the shortest representable window, clamping enabled.
"""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import __version__
from .backend import Backend
from .codec import DomainId, DomainKind, PowerLimit, decode_power_limit, encode_power_limit
from .errors import OutOfRange, TooLowBaseline
from .harness import (
    ExperimentConfig,
    PerformanceVerdict,
    achieved_fraction,
    check_performance,
    curves_from_results,
)
from .metrics import PowerCurve, ep_report
from .node_model.profile import SUBJECTS, WorkloadProfile
from .node_model.simulate import LevelResult

GRID_STEP_W = 2.0
GRID_SIZE = 15
SUITE_LEVELS = (0.2, 0.4, 0.6, 0.8, 1.0)
SUITE_REPORT_SCHEMA = "raplprop/suite-report/1"


class CapPolicy(str, enum.Enum):
    CPU_ONLY = "cpuonly"
    MEM_ONLY = "memonly"
    CPU_MEM = "cpumem"

    @property
    def kinds(self) -> tuple[DomainKind, ...]:
        return {
            CapPolicy.CPU_ONLY: (DomainKind.CORE,),
            CapPolicy.MEM_ONLY: (DomainKind.DRAM,),
            CapPolicy.CPU_MEM: (DomainKind.CORE, DomainKind.DRAM),
        }[self]

    @classmethod
    def parse(cls, text: str) -> "CapPolicy":
        key = text.strip().lower().replace("+", "").replace("_", "").replace("-", "")
        for p in cls:
            if p.value == key:
                return p
        raise ValueError(f"unknown policy {text!r}; choose from {', '.join(p.value for p in cls)}")


ALL_POLICIES = tuple(CapPolicy)


def enumerate_limits(avg_power: float) -> list[float]:
    """The 15 candidate bounds ``avg, avg-2, ..., avg-28`` (descending)."""
    if avg_power <= GRID_STEP_W * (GRID_SIZE - 1):
        raise TooLowBaseline(
            f"average power {avg_power:.3f} W leaves no room for a {GRID_SIZE}-step grid"
        )
    return [avg_power - GRID_STEP_W * k for k in range(GRID_SIZE)]


def split_caps(backend: Backend, totals: dict[DomainKind, float]) -> dict[DomainId, PowerLimit]:
    """Per-socket limits from system-wide bounds, with the shortest window."""
    sockets = backend.capabilities.sockets
    window = backend.capabilities.units.time_unit
    return {
        DomainId(kind, s): PowerLimit(total / sockets, window, enabled=True, clamping=True)
        for kind, total in totals.items()
        for s in range(sockets)
    }


def candidate_grid(policy: CapPolicy, vanilla: LevelResult) -> list[dict[DomainKind, float]]:
    """Candidate system-wide totals in enumeration order (first domain varies slowest)."""
    grids = [enumerate_limits(vanilla.avg_power[k.value]) for k in policy.kinds]
    return [dict(zip(policy.kinds, combo)) for combo in itertools.product(*grids)]


@dataclass
class Candidate:
    totals: dict[DomainKind, float]
    result: LevelResult | None
    verdict: PerformanceVerdict
    savings_pct: float


@dataclass
class CapSearchResult:
    level: float
    policy: CapPolicy
    best_caps: dict[DomainId, PowerLimit] | None
    best_totals: dict[DomainKind, float] | None
    raw_encodings: dict[str, int]
    vanilla_power: dict[str, float]
    capped_power: dict[str, float]
    savings_pct: float
    verdict: PerformanceVerdict
    efficiency_gain_pct: float
    candidates_evaluated: int
    passing_candidates: int
    best_result: LevelResult | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "policy": self.policy.value,
            "best_caps": None if self.best_caps is None else {
                d.label: {
                    "bound_w": l.bound,
                    "time_window_s": l.time_window,
                    "enabled": l.enabled,
                    "clamping": l.clamping,
                    "raw": f"{self.raw_encodings[d.label]:#018x}",
                }
                for d, l in sorted(self.best_caps.items())
            },
            "best_totals_w": None if self.best_totals is None else {
                k.value: v for k, v in self.best_totals.items()
            },
            "vanilla_power_w": dict(self.vanilla_power),
            "capped_power_w": dict(self.capped_power),
            "savings_pct": self.savings_pct,
            "verdict": self.verdict.to_dict(),
            "efficiency_gain_pct": self.efficiency_gain_pct,
            "candidates_evaluated": self.candidates_evaluated,
            "passing_candidates": self.passing_candidates,
        }


def _savings(vanilla: LevelResult, capped: LevelResult) -> float:
    v = vanilla.avg_power["full_system"]
    return 100.0 * (v - capped.avg_power["full_system"]) / v


def efficiency_gain(vanilla: LevelResult, capped: LevelResult) -> float:
    """Relative change in work per joule of full-system energy, in percent."""
    if vanilla.work_done == 0:
        return 0.0
    ev = vanilla.work_done / vanilla.avg_power["full_system"]
    ec = capped.work_done / capped.avg_power["full_system"]
    return 100.0 * (ec - ev) / ev


def evaluate_candidate(backend: Backend, profile: WorkloadProfile, level: float,
                       totals: dict[DomainKind, float], config: ExperimentConfig,
                       vanilla: LevelResult, target: float | None = None) -> Candidate:
    caps = split_caps(backend, totals)
    try:
        r = backend.run_level(level, config.level_duration, caps=caps)
    except OutOfRange as exc:
        return Candidate(totals, None, PerformanceVerdict(False, 0.0, f"OutOfRange: {exc}"), 0.0)
    return Candidate(totals, r, check_performance(r, profile.kind, config, target), _savings(vanilla, r))


def pick_best(candidates: Sequence[Candidate]) -> Candidate | None:
    """Largest savings among passing candidates; lower total cap, then order, break ties."""
    best = None
    for c in candidates:
        if not c.verdict.passed:
            continue
        if best is None or c.savings_pct > best.savings_pct or (
            c.savings_pct == best.savings_pct and sum(c.totals.values()) < sum(best.totals.values())
        ):
            best = c
    return best


def search(backend: Backend, profile: WorkloadProfile, level: float, policy: CapPolicy,
           config: ExperimentConfig, vanilla: LevelResult | None = None,
           target: float | None = None) -> CapSearchResult:
    """Exhaustively evaluate the policy's grid at ``level``.

    ``vanilla`` is the shared uncapped baseline; it is measured when not
    supplied.  If no candidate passes, or the best one draws more power than
    running uncapped, the vanilla run is reported with zero savings and
    ``best_caps`` is ``None``.
    """
    if vanilla is None:
        vanilla = backend.run_level(level, config.level_duration, caps={})
    grid = candidate_grid(policy, vanilla)
    candidates = [
        evaluate_candidate(backend, profile, level, totals, config, vanilla, target) for totals in grid
    ]
    best = pick_best(candidates)
    passing = sum(c.verdict.passed for c in candidates)
    if best is None or best.savings_pct < 0:
        return CapSearchResult(
            level, policy, None, None, {}, dict(vanilla.avg_power), dict(vanilla.avg_power), 0.0,
            check_performance(vanilla, profile.kind, config, target), 0.0, len(grid), passing, vanilla,
        )
    # Report the limits as programmed, after register quantisation.
    units = backend.capabilities.units
    raw = {d.label: encode_power_limit(l, units) for d, l in split_caps(backend, best.totals).items()}
    caps = {DomainId.parse(label): decode_power_limit(r, units) for label, r in raw.items()}
    return CapSearchResult(
        level=level,
        policy=policy,
        best_caps=caps,
        best_totals=dict(best.totals),
        raw_encodings=raw,
        vanilla_power=dict(vanilla.avg_power),
        capped_power=dict(best.result.avg_power),
        savings_pct=best.savings_pct,
        verdict=best.verdict,
        efficiency_gain_pct=efficiency_gain(vanilla, best.result),
        candidates_evaluated=len(grid),
        passing_candidates=passing,
        best_result=best.result,
    )


@dataclass
class SuiteReport:
    profile: str
    levels: tuple[float, ...]
    policies: tuple[CapPolicy, ...]
    vanilla: dict[float, LevelResult]
    idle: LevelResult | None
    results: dict[float, dict[CapPolicy, CapSearchResult]]
    vanilla_curves: dict[str, PowerCurve]
    post_cap_curves: dict[str, PowerCurve]

    def savings(self, policy: CapPolicy) -> dict[float, float]:
        return {u: self.results[u][policy].savings_pct for u in self.levels}

    def metrics(self, which: str = "post_cap") -> dict[str, dict]:
        curves = self.post_cap_curves if which == "post_cap" else self.vanilla_curves
        return {s: ep_report(c).to_dict() for s, c in curves.items()}

    def to_dict(self) -> dict:
        doc = {
            "schema": SUITE_REPORT_SCHEMA,
            "tool_version": __version__,
            "profile": self.profile,
            "policies": [p.value for p in self.policies],
            "levels": [
                {
                    "load": u,
                    "vanilla_power_w": dict(self.vanilla[u].avg_power),
                    "policies": {p.value: r.to_dict() for p, r in self.results[u].items()},
                }
                for u in self.levels
            ],
        }
        if self.post_cap_curves:
            doc["vanilla"] = {
                "curves": {s: [list(p) for p in c.points()] for s, c in self.vanilla_curves.items()},
                "metrics": self.metrics("vanilla"),
            }
            doc["post_cap"] = {
                "curves": {s: [list(p) for p in c.points()] for s, c in self.post_cap_curves.items()},
                "metrics": self.metrics("post_cap"),
            }
        return doc


def _post_cap_source(per_policy: dict[CapPolicy, CapSearchResult]) -> CapSearchResult | None:
    if CapPolicy.CPU_MEM in per_policy:
        return per_policy[CapPolicy.CPU_MEM]
    if not per_policy:
        return None
    return max(per_policy.values(), key=lambda r: r.savings_pct)


def evaluate_suite(backend: Backend, profile: WorkloadProfile, config: ExperimentConfig,
                   levels: Iterable[float] = SUITE_LEVELS,
                   policies: Iterable[CapPolicy] = ALL_POLICIES,
                   target: float | None = None) -> SuiteReport:
    """Search every policy at every level and assemble vanilla and post-cap curves.

    The post-cap curve pairs the vanilla idle run with the best CPU+Mem
    setting at each level (or the best available policy when CPU+Mem was
    not searched), so its metrics compare directly with the vanilla ones.
    """
    levels = tuple(sorted(float(u) for u in levels))
    policies = tuple(policies)
    vanilla, results = {}, {}
    for u in levels:
        vanilla[u] = backend.run_level(u, config.level_duration, caps={})
        results[u] = {
            p: search(backend, profile, u, p, config, vanilla=vanilla[u], target=target) for p in policies
        }
    idle = None
    vanilla_curves, post_curves = {}, {}
    if policies and levels and levels[-1] == 1.0:
        idle = backend.run_level(0.0, config.level_duration, caps={})
        van_runs = [idle] + [vanilla[u] for u in levels if u > 0]
        post_runs = [idle]
        for u in levels:
            if u == 0:
                continue
            src = _post_cap_source(results[u])
            post_runs.append(src.best_result if src.best_result is not None else vanilla[u])
        vanilla_curves = curves_from_results(van_runs, SUBJECTS)
        post_curves = curves_from_results(post_runs, SUBJECTS)
    return SuiteReport(profile.name, levels, policies, vanilla, idle, results, vanilla_curves, post_curves)


def write_suite_csv(report: SuiteReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([
            "load", "policy", "core_cap_w", "dram_cap_w", "vanilla_full_system_w",
            "capped_full_system_w", "savings_pct", "passed", "achieved",
            "efficiency_gain_pct", "candidates_evaluated",
        ])
        for u in report.levels:
            for p, r in report.results[u].items():
                totals = r.best_totals or {}
                w.writerow([
                    u, p.value,
                    totals.get(DomainKind.CORE, ""), totals.get(DomainKind.DRAM, ""),
                    r.vanilla_power["full_system"], r.capped_power["full_system"],
                    r.savings_pct, int(r.verdict.passed), r.verdict.achieved,
                    r.efficiency_gain_pct, r.candidates_evaluated,
                ])
