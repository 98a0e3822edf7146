"""Subsystem-level RAPL power management toolkit.

Register codec, simulated and MSR backends, energy-proportionality metrics,
a graduated load-level harness and a power-cap search.
"""

__version__ = "0.1.0"
