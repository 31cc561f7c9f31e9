"""Deterministic in-process network: virtual time, seeded links, full peers."""

from .sim import AdversarySpec, ScenarioConfig, SimNet, TimerHandle, parse_scenario
from .peer import SimPeer, spawn

__all__ = [
    "AdversarySpec",
    "ScenarioConfig",
    "SimNet",
    "SimPeer",
    "TimerHandle",
    "parse_scenario",
    "spawn",
]
