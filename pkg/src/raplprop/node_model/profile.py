"""Workload profiles: calibrated per-subsystem curves plus the fluctuation model."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

from ..errors import SchemaError
from .curves import SubsystemCurve, calibrate_gamma, fit_residual, mean_power

BUILTIN_PROFILES = ("specpower-2012", "specweb-ecommerce")

# Curve keys a profile may carry; "uncore" is always package minus core.
CURVE_KEYS = ("package", "core", "dram", "rest_of_system")
SUBJECTS = ("full_system", "package", "core", "uncore", "dram")


class WorkloadKind(str, enum.Enum):
    THROUGHPUT = "throughput"
    SESSION = "session"


@dataclass(frozen=True)
class ReferenceRow:
    """Published characteristics of one subject, used only as a calibration target."""

    idle_pct: float
    dynamic_range_pct: float
    ep: float
    ld: float | None = None


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    kind: WorkloadKind
    curves: Mapping[str, SubsystemCurve]
    max_performance: float
    noise_cv: float = 0.01
    spike_prob: float = 0.01
    spike_level: float = 1.0
    base_latency: float | None = None
    sockets: int = 2
    noise_overrides: Mapping[str, float] = field(default_factory=dict)
    reference: Mapping[str, ReferenceRow] = field(default_factory=dict)

    def __post_init__(self):
        missing = [k for k in CURVE_KEYS if k not in self.curves]
        if missing:
            raise SchemaError(f"profile {self.name!r} lacks curves {missing}", field="curves")
        if not 0.0 <= self.spike_prob <= 1.0:
            raise SchemaError("spike_prob must lie in [0, 1]", field="spike_prob")
        if self.noise_cv < 0 or any(v < 0 for v in self.noise_overrides.values()):
            raise SchemaError("noise_cv must be >= 0", field="noise_cv")
        if self.sockets < 1:
            raise SchemaError("sockets must be >= 1", field="sockets")
        if self.kind is WorkloadKind.SESSION and not self.base_latency:
            raise SchemaError("session workloads need base_latency_s", field="base_latency_s")
        if self.curves["core"].peak_power > self.curves["package"].peak_power:
            raise SchemaError("core peak exceeds package peak", field="curves.core")

    def noise_for(self, component: str) -> float:
        if component == "uncore":
            component = "package"
        return self.noise_overrides.get(component, self.noise_cv)

    def subject_mean(self, subject: str, load):
        """System-wide mean power of ``subject`` (summed over sockets)."""
        if subject == "uncore":
            return mean_power(self.curves["package"], load) - mean_power(self.curves["core"], load)
        if subject == "full_system":
            return sum(mean_power(self.curves[k], load) for k in ("package", "dram", "rest_of_system"))
        return mean_power(self.curves[subject], load)

    def with_fluctuations(self, noise_cv=None, spike_prob=None, spike_level=None) -> "WorkloadProfile":
        """Copy with the fluctuation model replaced; ``noise_cv`` also drops per-curve overrides."""
        kw = {}
        if noise_cv is not None:
            kw["noise_cv"] = noise_cv
            kw["noise_overrides"] = {}
        if spike_prob is not None:
            kw["spike_prob"] = spike_prob
        if spike_level is not None:
            kw["spike_level"] = spike_level
        return replace(self, **kw)


def _curve_from_block(key: str, block: Mapping) -> SubsystemCurve:
    try:
        peak = float(block["peak_w"])
        idle = float(block["idle_fraction"])
    except KeyError as exc:
        raise SchemaError(f"curve {key!r} missing {exc.args[0]!r}", field=f"curves.{key}.{exc.args[0]}")
    if "gamma" in block:
        gamma = float(block["gamma"])
    elif "ep_target" in block:
        gamma = calibrate_gamma(idle, float(block["ep_target"]))
    else:
        raise SchemaError(f"curve {key!r} needs ep_target or gamma", field=f"curves.{key}")
    return SubsystemCurve(peak, idle, gamma)


def profile_from_dict(doc: Mapping) -> WorkloadProfile:
    for key in ("name", "kind", "max_performance", "curves"):
        if key not in doc:
            raise SchemaError(f"profile missing {key!r}", field=key)
    blocks = doc["curves"]
    curves = {k: _curve_from_block(k, blocks[k]) for k in ("package", "core", "dram") if k in blocks}
    if "rest_of_system" in blocks:
        curves["rest_of_system"] = _curve_from_block("rest_of_system", blocks["rest_of_system"])
    elif "full_system" in blocks and len(curves) == 3:
        total = blocks["full_system"]
        curves["rest_of_system"] = fit_residual(
            [curves["package"], curves["dram"]],
            float(total["peak_w"]),
            float(total["idle_fraction"]),
            float(total["ep_target"]),
        )
    noise_overrides = {
        k: float(b["noise_cv"]) for k, b in blocks.items() if k in CURVE_KEYS and "noise_cv" in b
    }
    reference = {k: ReferenceRow(**v) for k, v in doc.get("reference", {}).items()}
    try:
        kind = WorkloadKind(doc["kind"])
    except ValueError:
        raise SchemaError(f"unknown workload kind {doc['kind']!r}", field="kind")
    return WorkloadProfile(
        name=str(doc["name"]),
        kind=kind,
        curves=curves,
        max_performance=float(doc["max_performance"]),
        noise_cv=float(doc.get("noise_cv", 0.01)),
        spike_prob=float(doc.get("spike_prob", 0.01)),
        spike_level=float(doc.get("spike_level", 1.0)),
        base_latency=doc.get("base_latency_s"),
        sockets=int(doc.get("sockets", 2)),
        noise_overrides=noise_overrides,
        reference=reference,
    )


def profile_to_dict(profile: WorkloadProfile) -> dict:
    curves = {}
    for key, c in profile.curves.items():
        block = {"peak_w": c.peak_power, "idle_fraction": c.idle_fraction, "gamma": c.gamma}
        if key in profile.noise_overrides:
            block["noise_cv"] = profile.noise_overrides[key]
        curves[key] = block
    doc = {
        "name": profile.name,
        "kind": profile.kind.value,
        "max_performance": profile.max_performance,
        "sockets": profile.sockets,
        "noise_cv": profile.noise_cv,
        "spike_prob": profile.spike_prob,
        "spike_level": profile.spike_level,
        "base_latency_s": profile.base_latency,
        "curves": curves,
    }
    if profile.reference:
        doc["reference"] = {k: dict(r.__dict__) for k, r in profile.reference.items()}
    return doc


def load_profile(name_or_path: str | Path) -> WorkloadProfile:
    """Load a built-in profile by name, or a JSON profile from disk."""
    if str(name_or_path) in BUILTIN_PROFILES:
        text = resources.files("raplprop").joinpath(f"profiles/{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise SchemaError(
                f"no built-in profile or file named {str(name_or_path)!r} "
                f"(built-ins: {', '.join(BUILTIN_PROFILES)})",
                field="profile",
            )
        text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"profile is not valid JSON: {exc}", field="profile")
    from ..validation import validate

    validate(doc, "profile")
    return profile_from_dict(doc)
