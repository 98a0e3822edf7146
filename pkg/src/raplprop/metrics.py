"""Energy-proportionality metrics over sampled power curves, plus power CDFs.

* EP: ``1 - (A - A_ideal) / A_ideal`` with ``A_ideal = P(1)/2``;
  1 is ideal, 0 is constant power, above 1 beats proportionality.
* PG at load ``x``: ``(P(x) - x P(1)) / P(1)``.
* LD: ``A / A_chord - 1`` where the chord runs from idle to peak; 0 for a
  straight line, positive when the curve bulges above it.

Areas use the trapezoid rule on the sampled loads.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTrace, LevelNotSampled, MissingEndpoints, SchemaError

LEVEL_ATOL = 1e-9


@dataclass(frozen=True)
class PowerCurve:
    subject: str
    loads: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        loads = np.asarray(self.loads, dtype=float)
        powers = np.asarray(self.powers, dtype=float)
        if loads.shape != powers.shape or loads.ndim != 1:
            raise ValueError("loads and powers must be 1-D and equally long")
        order = np.argsort(loads, kind="stable")
        loads, powers = loads[order], powers[order]
        if np.any(np.diff(loads) <= 0):
            raise ValueError("loads must be distinct")
        if len(loads) and (loads[0] < 0 or loads[-1] > 1):
            raise ValueError("loads must lie in [0, 1]")
        if np.any(powers < 0) or not np.all(np.isfinite(powers)):
            raise ValueError("powers must be finite and non-negative")
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "powers", powers)

    @classmethod
    def from_points(cls, subject: str, points) -> "PowerCurve":
        pts = list(points)
        return cls(subject, [p[0] for p in pts], [p[1] for p in pts])

    @classmethod
    def from_function(cls, subject: str, fn, n: int = 11) -> "PowerCurve":
        loads = np.linspace(0.0, 1.0, n)
        return cls(subject, loads, np.asarray(fn(loads), dtype=float) * np.ones_like(loads))

    def _endpoints(self):
        if len(self.loads) < 2 or self.loads[0] != 0.0 or self.loads[-1] != 1.0:
            raise MissingEndpoints(f"curve {self.subject!r} must be sampled at loads 0 and 1")
        if self.powers[-1] <= 0:
            raise MissingEndpoints(f"curve {self.subject!r} has zero peak power")
        return float(self.powers[0]), float(self.powers[-1])

    @property
    def idle(self) -> float:
        return self._endpoints()[0]

    @property
    def peak(self) -> float:
        return self._endpoints()[1]

    def at(self, level: float) -> float:
        idx = np.flatnonzero(np.isclose(self.loads, level, rtol=0.0, atol=LEVEL_ATOL))
        if not len(idx):
            raise LevelNotSampled(f"load {level:g} is not sampled in curve {self.subject!r}")
        return float(self.powers[idx[0]])

    def points(self):
        return list(zip(self.loads.tolist(), self.powers.tolist()))


def area_under(curve: PowerCurve) -> float:
    curve._endpoints()
    return float(np.trapezoid(curve.powers, curve.loads))


def ep_metric(curve: PowerCurve) -> float:
    ideal = curve.peak / 2.0
    return 1.0 - (area_under(curve) - ideal) / ideal


def pg_metric(curve: PowerCurve, level: float) -> float:
    peak = curve.peak
    return (curve.at(level) - level * peak) / peak


def ld_metric(curve: PowerCurve) -> float:
    idle, peak = curve._endpoints()
    return area_under(curve) / ((idle + peak) / 2.0) - 1.0


def idle_and_range(curve: PowerCurve) -> tuple[float, float]:
    idle, peak = curve._endpoints()
    idle_pct = 100.0 * idle / peak
    return idle_pct, 100.0 - idle_pct


@dataclass(frozen=True)
class EPReport:
    subject: str
    ep: float
    ld: float
    pg: dict[float, float]
    idle_pct: float
    dynamic_range_pct: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "ep": self.ep,
            "ld": self.ld,
            "pg": {f"{k:.4g}": v for k, v in sorted(self.pg.items())},
            "idle_pct": self.idle_pct,
            "dynamic_range_pct": self.dynamic_range_pct,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EPReport":
        try:
            return cls(
                subject=doc["subject"],
                ep=float(doc["ep"]),
                ld=float(doc["ld"]),
                pg={float(k): float(v) for k, v in doc["pg"].items()},
                idle_pct=float(doc["idle_pct"]),
                dynamic_range_pct=float(doc["dynamic_range_pct"]),
                warnings=tuple(doc.get("warnings", ())),
            )
        except KeyError as exc:
            raise SchemaError(f"EP report missing {exc.args[0]!r}", field=exc.args[0]) from None


def ep_report(curve: PowerCurve) -> EPReport:
    """All proportionality metrics of one curve.

    An EP outside [0, 2) cannot come from a physical curve; it is reported
    unchanged with a warning rather than raised.
    """
    ep = ep_metric(curve)
    warnings = []
    if not 0.0 <= ep < 2.0:
        warnings.append(f"EP {ep:.4f} outside [0, 2); check the input curve")
    idle_pct, dyn = idle_and_range(curve)
    return EPReport(
        subject=curve.subject,
        ep=ep,
        ld=ld_metric(curve),
        pg={float(u): pg_metric(curve, u) for u in curve.loads},
        idle_pct=idle_pct,
        dynamic_range_pct=dyn,
        warnings=tuple(warnings),
    )


# -- CDFs ------------------------------------------------------------------------

@dataclass(frozen=True)
class CdfCurve:
    values: np.ndarray
    cumulative: np.ndarray
    normalizer: float
    subject: str = ""

    def fraction_at_or_below(self, x: float) -> float:
        i = np.searchsorted(self.values, x, side="right")
        return float(self.cumulative[i - 1]) if i else 0.0

    def points(self):
        return list(zip(self.values.tolist(), self.cumulative.tolist()))

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "normalizer_w": self.normalizer,
            "points": [[v, c] for v, c in self.points()],
        }


def build_cdf(samples, normalizer: float, subject: str | None = None) -> CdfCurve:
    """Empirical CDF of ``samples / normalizer``; ``samples`` may be a trace."""
    if normalizer <= 0:
        raise ValueError("normalizer must be > 0")
    if hasattr(samples, "powers"):
        subject = subject if subject is not None else samples.subject
        samples = samples.powers
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptyTrace("cannot build a CDF from an empty trace")
    values, counts = np.unique(x / normalizer, return_counts=True)
    cum = np.cumsum(counts) / x.size
    cum[-1] = 1.0
    return CdfCurve(values, cum, float(normalizer), subject or "")


def write_cdf_csv(cdf: CdfCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["normalized_power", "cumulative_fraction"])
        for v, c in cdf.points():
            w.writerow([repr(v), repr(c)])


def read_cdf_csv(path, normalizer: float = 1.0, subject: str = "") -> CdfCurve:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["normalized_power", "cumulative_fraction"]:
            raise SchemaError(f"{path}: expected header normalized_power,cumulative_fraction")
        rows = [(float(a), float(b)) for a, b in reader]
    if not rows:
        raise EmptyTrace(f"{path}: no CDF points")
    v, c = zip(*rows)
    return CdfCurve(np.array(v), np.array(c), normalizer, subject)


# -- power curve files -----------------------------------------------------------

def write_curves_csv(curves: dict[str, PowerCurve], path) -> None:
    """One row per load level, one column per subject."""
    names = list(curves)
    loads = curves[names[0]].loads
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["load"] + [f"{n}_w" for n in names])
        for i, u in enumerate(loads.tolist()):
            w.writerow([repr(u)] + [repr(float(curves[n].powers[i])) for n in names])


def read_curves_csv(path) -> dict[str, PowerCurve]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "load" or not all(h.endswith("_w") for h in header[1:]):
            raise SchemaError(f"{path}: expected header load,<subject>_w,...", field="header")
        rows = [[float(x) for x in r] for r in reader if r]
    if not rows:
        raise SchemaError(f"{path}: no rows", field="rows")
    arr = np.array(rows)
    return {h[:-2]: PowerCurve(h[:-2], arr[:, 0], arr[:, i + 1]) for i, h in enumerate(header[1:])}


def curves_from_report(doc: dict) -> dict[str, PowerCurve]:
    """Power curves from a run report (``levels[*].avg_power_w``) or a bare curve document."""
    if not isinstance(doc, dict):
        raise SchemaError("report must be a JSON object", field="<root>")
    if "curves" in doc:
        out = {}
        for name, pts in doc["curves"].items():
            try:
                out[name] = PowerCurve.from_points(name, pts)
            except (TypeError, IndexError, ValueError) as exc:
                raise SchemaError(f"curve {name!r}: {exc}", field=f"curves.{name}") from None
        return out
    levels = doc.get("levels")
    if not isinstance(levels, list) or not levels:
        raise SchemaError("report has no 'levels' list", field="levels")
    series: dict[str, list] = {}
    for i, lvl in enumerate(levels):
        if "load" not in lvl:
            raise SchemaError(f"levels[{i}] lacks 'load'", field=f"levels[{i}].load")
        if not isinstance(lvl.get("avg_power_w"), dict):
            raise SchemaError(f"levels[{i}] lacks 'avg_power_w'", field=f"levels[{i}].avg_power_w")
        for subject, w in lvl["avg_power_w"].items():
            if "-" not in subject:
                series.setdefault(subject, []).append((float(lvl["load"]), float(w)))
    return {s: PowerCurve.from_points(s, pts) for s, pts in series.items()}


def dump_json(obj, path=None, **kw) -> str:
    text = json.dumps(obj, indent=2, sort_keys=False, **kw) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
