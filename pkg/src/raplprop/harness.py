"""Graduated load-level experiments: calibration, per-level runs, performance checks."""

from __future__ import annotations

import dataclasses
import datetime as _dt
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import __version__
from .backend import Backend
from .errors import BackendFailure, SchemaError
from .metrics import PowerCurve, ep_report
from .node_model.profile import SUBJECTS, WorkloadKind, WorkloadProfile
from .node_model.simulate import LevelResult

DEFAULT_LEVELS = tuple(round(1.0 - 0.1 * i, 1) for i in range(11))
RUN_REPORT_SCHEMA = "raplprop/run-report/1"


@dataclass(frozen=True)
class ExperimentConfig:
    load_levels: tuple[float, ...] = DEFAULT_LEVELS
    level_duration: float = 120.0
    settle_interval: float = 15.0
    calibration_runs: int = 10
    performance_tolerance: float = 0.01
    time_good: float = 3.0
    time_tolerable: float = 5.0
    good_percentile: float = 0.95
    tolerable_percentile: float = 0.99
    seed: int = 0

    def __post_init__(self):
        levels = tuple(float(u) for u in self.load_levels)
        object.__setattr__(self, "load_levels", levels)
        if not levels or any(not 0.0 <= u <= 1.0 for u in levels):
            raise SchemaError("load_levels must be fractions in [0, 1]", field="load_levels")
        if len(set(levels)) != len(levels):
            raise SchemaError("load_levels contains duplicates", field="load_levels")
        for name in ("level_duration", "time_good", "time_tolerable", "performance_tolerance"):
            if getattr(self, name) <= 0:
                raise SchemaError(f"{name} must be > 0", field=name)
        if self.settle_interval < 0:
            raise SchemaError("settle_interval must be >= 0", field="settle_interval")
        if self.calibration_runs < 1:
            raise SchemaError("calibration_runs must be >= 1", field="calibration_runs")
        # The simulator reports exactly these two latency percentiles.
        if (self.good_percentile, self.tolerable_percentile) != (0.95, 0.99):
            raise SchemaError("only the 0.95/0.99 latency percentiles are supported",
                              field="good_percentile")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["load_levels"] = list(self.load_levels)
        return d

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise SchemaError(f"unknown config keys {sorted(unknown)}", field=sorted(unknown)[0])
        kw = dict(doc)
        if "load_levels" in kw:
            kw["load_levels"] = tuple(kw["load_levels"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise SchemaError(str(exc), field="config") from None


@dataclass(frozen=True)
class PerformanceVerdict:
    passed: bool
    achieved: float
    reason: str

    def to_dict(self) -> dict:
        return {"passed": self.passed, "achieved": self.achieved, "reason": self.reason}


def achieved_fraction(result: LevelResult, target: float | None = None) -> float:
    """Work done relative to ``load * target`` over the run; 1.0 at load 0."""
    if result.load == 0:
        return 1.0
    if target is None:
        return result.achieved_performance
    return result.work_done / (result.load * target * result.duration)


def check_performance(result: LevelResult, kind: WorkloadKind, config: ExperimentConfig,
                      target: float | None = None) -> PerformanceVerdict:
    achieved = achieved_fraction(result, target)
    tol = config.performance_tolerance
    if kind is WorkloadKind.THROUGHPUT:
        ok = abs(achieved - 1.0) <= tol + 1e-12
        reason = "ok" if ok else f"throughput {achieved:.4f} of target, outside ±{tol:g}"
        return PerformanceVerdict(ok, achieved, reason)
    problems = []
    if achieved < 1.0 - tol - 1e-12:
        problems.append(f"sessions {achieved:.4f} of target")
    if result.latency_p95 is not None and result.latency_p95 > config.time_good:
        problems.append(f"TIME_GOOD: p95 {result.latency_p95:.3f} s > {config.time_good:g} s")
    if result.latency_p99 is not None and result.latency_p99 > config.time_tolerable:
        problems.append(f"TIME_TOLERABLE: p99 {result.latency_p99:.3f} s > {config.time_tolerable:g} s")
    return PerformanceVerdict(not problems, achieved, "; ".join(problems) or "ok")


def calibrate(backend: Backend, profile: WorkloadProfile, config: ExperimentConfig) -> float:
    """Mean uncapped full-load throughput over ``calibration_runs`` runs."""
    samples = []
    for _ in range(config.calibration_runs):
        r = backend.run_level(1.0, config.level_duration, caps={})
        samples.append(r.throughput)
    target = float(np.mean(samples))
    if not target > 0:
        raise BackendFailure("calibration measured no throughput")
    return target


@dataclass
class GraduatedRun:
    target: float
    results: list[LevelResult]
    verdicts: list[PerformanceVerdict]
    curves: dict[str, PowerCurve]

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


def curves_from_results(results, subjects=SUBJECTS) -> dict[str, PowerCurve]:
    return {
        s: PowerCurve(s, [r.load for r in results], [r.avg_power[s] for r in results])
        for s in subjects
    }


def run_graduated(backend: Backend, profile: WorkloadProfile, config: ExperimentConfig,
                  caps=None, target: float | None = None) -> GraduatedRun:
    """Run every configured level, settling before and after each measurement.

    ``caps`` is either one mapping applied at every level or a mapping from
    load level to caps.  ``target`` defaults to the profile's maximum
    performance (call :func:`calibrate` to measure it instead).
    """
    target = profile.max_performance if target is None else target
    results, verdicts = [], []
    for level in config.load_levels:
        level_caps = caps
        if caps and all(isinstance(k, float) for k in caps):
            level_caps = caps.get(level, {})
        if config.settle_interval > 0:
            backend.settle(level, config.settle_interval)
        r = backend.run_level(level, config.level_duration, caps=level_caps)
        if config.settle_interval > 0:
            backend.settle(level, config.settle_interval)
        results.append(r)
        verdicts.append(check_performance(r, profile.kind, config, target))
    return GraduatedRun(target, results, verdicts, curves_from_results(results))


def metric_block(curves: Mapping[str, PowerCurve]) -> dict:
    """EP report per subject, or an empty block when the curve lacks idle/peak samples."""
    loads = next(iter(curves.values())).loads if curves else []
    if len(loads) < 2 or loads[0] != 0.0 or loads[-1] != 1.0:
        return {}
    return {s: ep_report(c).to_dict() for s, c in curves.items()}


def level_to_dict(r: LevelResult, verdict: PerformanceVerdict | None, target: float) -> dict:
    d = {
        "load": r.load,
        "target": r.load * target,
        "duration_s": r.duration,
        "work_done": r.work_done,
        "achieved": achieved_fraction(r, target),
        "avg_power_w": dict(r.avg_power),
        "latency_p95_s": r.latency_p95,
        "latency_p99_s": r.latency_p99,
        "throttled_time_s": r.throttled_time,
        "throttled_by_domain_s": dict(r.throttled_by_domain),
    }
    if verdict is not None:
        d["verdict"] = verdict.to_dict()
    return d


def run_report(run: GraduatedRun, profile: WorkloadProfile, config: ExperimentConfig,
               backend_name: str = "sim", timestamps: bool = True) -> dict:
    doc = {
        "schema": RUN_REPORT_SCHEMA,
        "tool_version": __version__,
        "profile": profile.name,
        "workload_kind": profile.kind.value,
        "backend": backend_name,
        "config": config.to_dict(),
        "calibrated_target": run.target,
        "all_passed": run.all_passed,
        "levels": [level_to_dict(r, v, run.target) for r, v in zip(run.results, run.verdicts)],
        "metrics": metric_block(run.curves),
    }
    if timestamps:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return doc
