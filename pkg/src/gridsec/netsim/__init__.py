"""Deterministic discrete-event cyber range for substation attack and defense studies."""

from .bitw import AuthTrailer, BitwNetwork, BitwResult, bitw_process, frame_digest, provenance_tag
from .engine import EventQueue, SchedulingError, SimEvent
from .frames import Frame
from .plant import (Breaker, BreakerCommand, GatewayDecision, Plant, PlantSnapshot, PlcError, PlcRule,
                    ReversalAction, command_gateway, command_reverse, plc_step)
from .scenario import (Scenario, ScenarioError, SimNode, bundled_scenario, bundled_scenarios, load_scenario,
                       resolve_scenario)
from .simulator import SimReport, Simulator, TraceRow, fdi_measurement_stream, learn_scenario_baseline, run

__all__ = [
    "AuthTrailer", "BitwNetwork", "BitwResult", "bitw_process", "frame_digest", "provenance_tag",
    "EventQueue", "SchedulingError", "SimEvent", "Frame",
    "Breaker", "BreakerCommand", "GatewayDecision", "Plant", "PlantSnapshot", "PlcError", "PlcRule",
    "ReversalAction", "command_gateway", "command_reverse", "plc_step",
    "Scenario", "ScenarioError", "SimNode", "bundled_scenario", "bundled_scenarios", "load_scenario",
    "resolve_scenario", "SimReport", "Simulator", "TraceRow", "fdi_measurement_stream",
    "learn_scenario_baseline", "run",
]
