"""Before/after road-safety analysis of vehicle and vulnerable-road-user trajectories."""

from __future__ import annotations

__version__ = "0.1.0"
