"""Discrete-event simulator of energy-aware TWDM-PON upstream scheduling."""

from .core import (Branch, ConfigError, DelayPolicy, HorizonSet, OnuState, ProtocolError,
                   ScheduleDecision, SchedulerKind, SimConfig, Void, VoidSet, carve_window)
from .metrics import RunStats, eta_max
from .engine import run

__all__ = [
    "Branch", "ConfigError", "DelayPolicy", "HorizonSet", "OnuState", "ProtocolError",
    "ScheduleDecision", "SchedulerKind", "SimConfig", "Void", "VoidSet", "carve_window",
    "RunStats", "eta_max", "run",
]
