"""Power-law mean power curves ``peak * (a + (1 - a) * load**gamma)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import Infeasible


@dataclass(frozen=True)
class SubsystemCurve:
    peak_power: float
    idle_fraction: float
    gamma: float = 1.0

    def __post_init__(self):
        if self.peak_power < 0:
            raise ValueError("peak_power must be >= 0")
        if not 0.0 <= self.idle_fraction < 1.0:
            raise ValueError(f"idle_fraction must lie in [0, 1), got {self.idle_fraction}")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")

    @property
    def idle_power(self) -> float:
        return self.peak_power * self.idle_fraction

    def scaled(self, factor: float) -> "SubsystemCurve":
        return SubsystemCurve(self.peak_power * factor, self.idle_fraction, self.gamma)

    def area_fraction(self) -> float:
        """Exact area under the normalised curve on [0, 1]."""
        a = self.idle_fraction
        return a + (1.0 - a) / (self.gamma + 1.0)

    def continuous_ep(self) -> float:
        a = self.idle_fraction
        return 2.0 * (1.0 - a) * self.gamma / (self.gamma + 1.0)


def calibrate_gamma(idle_fraction: float, ep_target: float) -> float:
    """Shape exponent whose continuous-area EP equals ``ep_target`` exactly."""
    a = idle_fraction
    if not 0.0 <= a < 1.0:
        raise ValueError(f"idle fraction must lie in [0, 1), got {a}")
    ceiling = 2.0 * (1.0 - a)
    if ep_target <= 0:
        raise Infeasible(f"EP target must be positive, got {ep_target}")
    if ep_target >= ceiling:
        raise Infeasible(
            f"EP {ep_target} unreachable with idle fraction {a}: must stay below {ceiling:.4f}"
        )
    return ep_target / (ceiling - ep_target)


def curve_from_targets(peak_power: float, idle_fraction: float, ep_target: float) -> SubsystemCurve:
    return SubsystemCurve(peak_power, idle_fraction, calibrate_gamma(idle_fraction, ep_target))


def mean_power(curve: SubsystemCurve, load):
    """Mean power at ``load`` (scalar or array) in watts."""
    u = np.asarray(load, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("load must lie in [0, 1]")
    a = curve.idle_fraction
    out = curve.peak_power * (a + (1.0 - a) * u ** curve.gamma)
    return float(out) if out.ndim == 0 else out


def fit_residual(
    parts: list[SubsystemCurve], total_peak: float, total_idle_fraction: float, total_ep: float
) -> SubsystemCurve:
    """Curve that, added to ``parts``, hits the total's idle, peak and continuous EP.

    Used for the rest of the system (disks, fans, NICs, regulators) so the
    node's full-system curve reproduces its measured endpoints and area.
    """
    peak = total_peak - sum(c.peak_power for c in parts)
    idle = total_peak * total_idle_fraction - sum(c.idle_power for c in parts)
    if peak <= 0 or idle < 0 or idle >= peak:
        raise Infeasible(
            f"subsystem curves leave no room for a residual (peak {peak:.3f} W, idle {idle:.3f} W)"
        )
    total_area = total_peak * (1.0 - total_ep / 2.0)
    area = total_area - sum(c.peak_power * c.area_fraction() for c in parts)
    a = idle / peak
    # area / peak = a + (1 - a) / (gamma + 1)
    frac = area / peak
    if not a < frac < 1.0:
        raise Infeasible(f"residual area fraction {frac:.4f} incompatible with idle {a:.4f}")
    gamma = (1.0 - a) / (frac - a) - 1.0
    return SubsystemCurve(peak, a, gamma)
