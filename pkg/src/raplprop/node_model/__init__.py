"""Simulated server node: calibrated power curves, fluctuations and cap enforcement."""

from .curves import SubsystemCurve, calibrate_gamma, curve_from_targets, fit_residual, mean_power
from .profile import (
    BUILTIN_PROFILES,
    SUBJECTS,
    ReferenceRow,
    WorkloadKind,
    WorkloadProfile,
    load_profile,
    profile_from_dict,
    profile_to_dict,
)
from .simulate import (
    DEFAULT_TICK,
    Demand,
    LevelResult,
    NodeState,
    TickBlock,
    advance,
    draw_demand,
    enforce,
    evaluate,
    level_demand,
    run_level,
    step,
    summarize,
    ticks_for,
    window_ticks,
)

__all__ = [
    "BUILTIN_PROFILES", "DEFAULT_TICK", "Demand", "LevelResult", "NodeState", "ReferenceRow",
    "SUBJECTS", "SubsystemCurve", "TickBlock", "WorkloadKind", "WorkloadProfile", "advance",
    "calibrate_gamma", "curve_from_targets", "draw_demand", "enforce", "evaluate", "fit_residual",
    "level_demand", "load_profile", "mean_power", "profile_from_dict", "profile_to_dict",
    "run_level", "step", "summarize", "ticks_for", "window_ticks",
]
