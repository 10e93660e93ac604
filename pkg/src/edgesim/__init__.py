"""Deterministic discrete-event emulator of a multi-radio edge node."""

__version__ = "0.1.0"

from .engine import Engine, RandomSource, SimClock, SimEvent, draw_uniform
from .radio import Packet, RadioKpis, Waveform
from .switch import FlowRule, Match, Port, VirtualSwitch
from .apps import AppManager, AppSpec
from .node import MecNode
from .telemetry import SlaPredicate, SlaReport, SlaSpec, TelemetryPlane
from .controller import (
    ActionRejected,
    Controller,
    InsertTranscoder,
    MoveFlow,
    PolicyEngine,
    RemoveTranscoder,
    SetAppBitrate,
    SetChannelError,
    SetCodeRate,
)
from .scenario import RunReport, ScenarioRun, ScenarioScript, load_scenario, run_scenario

__all__ = [
    "Engine",
    "RandomSource",
    "SimClock",
    "SimEvent",
    "draw_uniform",
    "Packet",
    "RadioKpis",
    "Waveform",
    "FlowRule",
    "Match",
    "Port",
    "VirtualSwitch",
    "AppManager",
    "AppSpec",
    "MecNode",
    "SlaPredicate",
    "SlaReport",
    "SlaSpec",
    "TelemetryPlane",
    "ActionRejected",
    "Controller",
    "InsertTranscoder",
    "MoveFlow",
    "PolicyEngine",
    "RemoveTranscoder",
    "SetAppBitrate",
    "SetChannelError",
    "SetCodeRate",
    "RunReport",
    "ScenarioRun",
    "ScenarioScript",
    "load_scenario",
    "run_scenario",
]
