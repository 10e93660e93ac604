"""Scenario definition, loading, run orchestration, and report export.

Scenario files are sectioned key = value text; the two built-in scenarios ship
as package data and run the two showcase experiments end to end.
"""

from __future__ import annotations

import configparser
import json
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

from .apps import AppSpec, SMS_CLIENT, SMS_SERVER, TRANSCODER
from .controller import (
    AUTOMATED,
    Controller,
    ControlAction,
    MANUAL,
    MIXED,
    MODES,
    PolicyEngine,
    SCRIPTED,
    SetChannelError,
    action_from_dict,
    action_to_dict,
)
from .engine import Engine
from .node import MecNode
from .radio import ALLOWED_CODE_RATES
from .telemetry import SlaPredicate, SlaSpec, TelemetryPlane

BUILTIN_SCENARIOS = ("scenario1", "scenario2")

_PREDICATE_RE = re.compile(
    r"^\s*(?P<metric>\w+)\s*(?P<cmp><=|>=)\s*(?P<bound>[0-9.eE+-]+)\s*@\s*(?P<window>[0-9.]+)\s*$"
)


class ScenarioError(ValueError):
    """Parse or semantic error in a scenario file."""


@dataclass
class WaveformDef:
    label: str
    raw_capacity: float
    code_rate: Fraction = Fraction(1)
    channel_per: float = 0.0
    correction_threshold: float = 0.10
    queue_bytes: int = 65536
    propagation: float = 0.001


@dataclass
class AppSchedule:
    time: float
    app_id: str
    spec: AppSpec
    waveform: str = ""


@dataclass
class ErrorSchedule:
    time: float
    waveform: str
    channel_per: float


@dataclass
class ScriptedAction:
    time: float
    action: ControlAction


@dataclass
class ScenarioScript:
    name: str
    seed: int
    duration: float
    mode: str = SCRIPTED
    tick: float = 1.0
    waveforms: list[WaveformDef] = field(default_factory=list)
    apps: list[AppSchedule] = field(default_factory=list)
    errors: list[ErrorSchedule] = field(default_factory=list)
    slas: list[SlaSpec] = field(default_factory=list)
    actions: list[ScriptedAction] = field(default_factory=list)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.duration <= 0:
            raise ScenarioError(f"duration must be positive, got {self.duration}")
        labels = {w.label for w in self.waveforms}
        if not labels:
            raise ScenarioError("scenario defines no waveforms")
        app_ids = set()
        for entry in self.apps:
            if entry.time >= self.duration:
                raise ScenarioError(f"app {entry.app_id!r} starts at {entry.time} >= duration {self.duration}")
            if entry.spec.kind != SMS_SERVER and entry.spec.kind != TRANSCODER:
                if entry.waveform not in labels:
                    raise ScenarioError(f"app {entry.app_id!r} references unknown waveform {entry.waveform!r}")
            if entry.spec.kind == SMS_CLIENT:
                servers = [a for a in self.apps if a.app_id == entry.spec.server_id]
                if not servers:
                    raise ScenarioError(f"sms_client {entry.app_id!r} references unknown server {entry.spec.server_id!r}")
                server = servers[0]
                if server.time > entry.time:
                    raise ScenarioError(f"sms_client {entry.app_id!r} starts before its server {server.app_id!r}")
            app_ids.add(entry.app_id)
        for err in self.errors:
            if err.time >= self.duration:
                raise ScenarioError(f"error injection at {err.time} >= duration {self.duration}")
            if err.waveform not in labels:
                raise ScenarioError(f"error injection references unknown waveform {err.waveform!r}")
        for sla in self.slas:
            if sla.app_id not in app_ids:
                raise ScenarioError(f"SLA references app {sla.app_id!r} which never starts")
            sla.validate()
        for entry in self.actions:
            if entry.time >= self.duration:
                raise ScenarioError(f"scripted action at {entry.time} >= duration {self.duration}")
            data = action_to_dict(entry.action)
            flow = data.get("flow") or data.get("app")
            if flow is not None and flow not in app_ids:
                raise ScenarioError(f"scripted action at {entry.time} references app/flow {flow!r} which never starts")
            target = data.get("target") or data.get("waveform")
            if target is not None and target not in labels:
                raise ScenarioError(f"scripted action at {entry.time} references unknown waveform {target!r}")


# -- file parsing -------------------------------------------------------------


def _get(section: configparser.SectionProxy, key: str, convert, default=None):
    if key not in section:
        if default is not None:
            return default
        raise ScenarioError(f"[{section.name}] is missing required key {key!r}")
    try:
        return convert(section[key])
    except (ValueError, ZeroDivisionError) as exc:
        raise ScenarioError(f"[{section.name}] {key} = {section[key]!r}: {exc}") from None


def _parse_predicates(text: str, section: str) -> list[SlaPredicate]:
    predicates = []
    for chunk in text.split(","):
        match = _PREDICATE_RE.match(chunk)
        if match is None:
            raise ScenarioError(
                f"[{section}] cannot parse predicate {chunk.strip()!r} "
                "(expected: metric <=|>= bound @ window)"
            )
        predicates.append(
            SlaPredicate(
                metric=match.group("metric"),
                comparator=match.group("cmp"),
                bound=float(match.group("bound")),
                window=float(match.group("window")),
            )
        )
    return predicates


def parse_scenario(text: str, name_hint: str = "scenario") -> ScenarioScript:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=name_hint)
    except configparser.Error as exc:
        raise ScenarioError(f"parse error: {exc}") from None
    if "scenario" not in parser:
        raise ScenarioError("missing [scenario] section")
    meta = parser["scenario"]
    script = ScenarioScript(
        name=meta.get("name", name_hint),
        seed=_get(meta, "seed", int, 0),
        duration=_get(meta, "duration", float),
        mode=meta.get("mode", SCRIPTED),
        tick=_get(meta, "tick", float, 1.0),
    )

    for section_name in parser.sections():
        section = parser[section_name]
        parts = section_name.split(None, 1)
        kind = parts[0]
        if kind == "scenario":
            continue
        if kind == "waveform":
            if len(parts) != 2:
                raise ScenarioError(f"[{section_name}] needs a label: [waveform HR]")
            rate = _get(section, "code_rate", Fraction, Fraction(1))
            if rate not in ALLOWED_CODE_RATES:
                raise ScenarioError(f"[{section_name}] code_rate {rate} not in {ALLOWED_CODE_RATES}")
            script.waveforms.append(
                WaveformDef(
                    label=parts[1],
                    raw_capacity=_get(section, "raw_capacity", float),
                    code_rate=rate,
                    channel_per=_get(section, "channel_per", float, 0.0),
                    correction_threshold=_get(section, "correction_threshold", float, 0.10),
                    queue_bytes=_get(section, "queue_bytes", int, 65536),
                    propagation=_get(section, "propagation", float, 0.001),
                )
            )
        elif kind == "app":
            if len(parts) != 2:
                raise ScenarioError(f"[{section_name}] needs an id: [app video1]")
            app_id = parts[1]
            spec = AppSpec(
                kind=_get(section, "kind", str),
                request_size=_get(section, "request_size", int, 100),
                response_size=_get(section, "response_size", int, 100),
                interval=_get(section, "interval", float, 1.0),
                timeout=_get(section, "timeout", float, 2.0),
                server_id=section.get("server", ""),
                bitrate=_get(section, "bitrate", float, 0.0),
                packet_size=_get(section, "packet_size", int, 1200),
                flow_id=section.get("flow_id", ""),
                input_flow=section.get("input_flow", ""),
                target_bitrate=_get(section, "target_bitrate", float, 0.0),
                processing_delay=_get(section, "processing_delay", float, 0.020),
                transcode_bitrate=_get(section, "transcode_bitrate", float, 0.0),
            )
            script.apps.append(
                AppSchedule(
                    time=_get(section, "start", float, 0.0),
                    app_id=app_id,
                    spec=spec,
                    waveform=section.get("waveform", ""),
                )
            )
        elif kind == "sla":
            if len(parts) != 2:
                raise ScenarioError(f"[{section_name}] needs an app id: [sla video1]")
            script.slas.append(
                SlaSpec(app_id=parts[1], predicates=_parse_predicates(_get(section, "predicates", str), section_name))
            )
        elif kind == "error":
            if len(parts) != 2:
                raise ScenarioError(f"[{section_name}] needs a time: [error 120]")
            script.errors.append(
                ErrorSchedule(
                    time=float(parts[1]),
                    waveform=_get(section, "waveform", str),
                    channel_per=_get(section, "channel_per", float),
                )
            )
        elif kind == "action":
            if len(parts) != 2:
                raise ScenarioError(f"[{section_name}] needs a time: [action 170]")
            time_token = parts[1].split()[0]
            data = dict(section)
            try:
                action = action_from_dict(data)
            except (KeyError, ValueError) as exc:
                raise ScenarioError(f"[{section_name}]: {exc}") from None
            script.actions.append(ScriptedAction(time=float(time_token), action=action))
        else:
            raise ScenarioError(f"unknown section [{section_name}]")

    script.apps.sort(key=lambda a: a.time)
    script.errors.sort(key=lambda e: e.time)
    script.actions.sort(key=lambda a: a.time)
    script.validate()
    return script


def load_scenario(path_or_name: str) -> ScenarioScript:
    """Load a scenario file, or a built-in by name ('scenario1', 'scenario2')."""
    if path_or_name in BUILTIN_SCENARIOS:
        text = resources.files("edgesim").joinpath(f"scenarios/{path_or_name}.ini").read_text()
        return parse_scenario(text, path_or_name)
    if not os.path.exists(path_or_name):
        raise ScenarioError(f"no such scenario file or built-in: {path_or_name!r}")
    with open(path_or_name, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), os.path.basename(path_or_name))


# -- run orchestration ----------------------------------------------------------


class ScenarioRun:
    """A fully wired simulation of one scenario: engine, node, telemetry,
    controller, and scheduled cues."""

    def __init__(
        self,
        script: ScenarioScript,
        mode: str | None = None,
        seed: int | None = None,
        pace: float = 0.0,
        keep_log: bool = False,
        app_latency: float = 0.5,
    ) -> None:
        self.script = script
        self.mode = mode or script.mode
        self.seed = script.seed if seed is None else seed
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.engine = Engine(self.seed, pace=pace, keep_log=keep_log)
        self.node = MecNode(self.engine, app_latency=app_latency)
        for wf in script.waveforms:
            self.node.add_radio_pair(
                wf.label,
                wf.raw_capacity,
                wf.code_rate,
                wf.channel_per,
                wf.correction_threshold,
                wf.queue_bytes,
                wf.propagation,
            )
        self.telemetry = TelemetryPlane(self.engine, self.node, script.tick)
        for sla in script.slas:
            self.telemetry.register_sla(sla)
        controller_mode = self.mode
        self.controller = Controller(self.node, self.telemetry, mode=controller_mode, policy=PolicyEngine())
        self._schedule_cues()
        self.finished = False

    def _schedule_cues(self) -> None:
        for entry in self.script.apps:
            self.engine.schedule_at(
                entry.time,
                lambda e=entry: self.node.start_app(e.spec, e.app_id, e.waveform),
                f"scenario:app:{entry.app_id}",
            )
        for err in self.script.errors:
            self.engine.schedule_at(
                err.time,
                lambda e=err: self.controller.apply(SetChannelError(e.waveform, e.channel_per), initiator="scenario"),
                f"scenario:error:{err.waveform}",
            )
        if self.mode == SCRIPTED:
            for entry in self.script.actions:
                self.engine.schedule_at(
                    entry.time,
                    lambda e=entry: self.controller.apply(e.action, initiator="script"),
                    f"scenario:action:{action_to_dict(entry.action)['type']}",
                )

    def execute(self) -> "RunReport":
        self.telemetry.start()
        self.engine.run_until(self.script.duration)
        self.finished = True
        return self.report()

    def report(self) -> "RunReport":
        return RunReport(self)


class RunReport:
    """Result of a run: summary statistics, action log, and the KPI traces."""

    def __init__(self, run: ScenarioRun) -> None:
        self.run = run
        self.script = run.script
        self.telemetry = run.telemetry

    @property
    def final_report(self):
        reports = self.telemetry.reports
        return reports[-1] if reports else None

    def summary(self) -> dict:
        run = self.run
        flows: dict[str, dict] = {}
        for waveform in run.node.all_waveforms():
            for flow_id, counters in waveform.per_flow.items():
                agg = flows.setdefault(
                    flow_id,
                    {
                        "offered_pkts": 0,
                        "delivered_pkts": 0,
                        "dropped_queue_pkts": 0,
                        "lost_channel_pkts": 0,
                        "in_queue_pkts": 0,
                        "delivered_bits": 0,
                    },
                )
                agg["offered_pkts"] += counters.offered_pkts
                agg["delivered_pkts"] += counters.delivered_pkts
                agg["dropped_queue_pkts"] += counters.dropped_queue_pkts
                agg["lost_channel_pkts"] += counters.lost_channel_pkts
                agg["in_queue_pkts"] += counters.in_queue_pkts
                agg["delivered_bits"] += counters.delivered_bits
        waveforms = {}
        for waveform in run.node.all_waveforms():
            waveforms[waveform.label] = {
                "raw_capacity": waveform.raw_capacity,
                "code_rate": str(waveform.code_rate),
                "effective_capacity": waveform.effective_capacity,
                "channel_per": waveform.channel_per,
                "residual_per": waveform.residual_per,
                "offered_pkts": waveform.totals.offered_pkts,
                "delivered_pkts": waveform.totals.delivered_pkts,
                "dropped_queue_pkts": waveform.totals.dropped_queue_pkts,
                "lost_channel_pkts": waveform.totals.lost_channel_pkts,
                "queue_bytes": waveform.queue_bytes,
            }
        apps = {}
        for app_id, instance in run.node.apps.instances.items():
            apps[app_id] = {"kind": instance.spec.kind, "state": instance.state, "kpis": instance.kpi_snapshot()}
        for app_id, frozen in run.node.apps.frozen_kpis.items():
            apps[app_id] = {"kind": "stopped", "state": "stopped", "kpis": frozen}
        final = self.final_report
        return {
            "scenario": self.script.name,
            "seed": run.seed,
            "mode": run.mode,
            "duration": self.script.duration,
            "final_fraction_satisfied": None if final is None else final.fraction_satisfied,
            "final_verdicts": {} if final is None else final.verdicts,
            "flows": flows,
            "waveforms": waveforms,
            "apps": apps,
            "switch": {
                "default_drops": run.node.switch.default_drops,
                "loop_drops": run.node.switch.loop_drops,
                "dead_port_drops": run.node.switch.dead_port_drops,
                "rule_drops": run.node.switch.rule_drops,
                "table": run.node.switch.table_dump(),
            },
            "conservation_ok": all(w.conservation_holds() for w in run.node.all_waveforms()),
            "actions": [record.to_dict() for record in run.controller.log],
        }

    def export(self, directory: str) -> list[str]:
        """Write trace files, the action log, and the summary; byte-deterministic
        for identical runs."""
        os.makedirs(directory, exist_ok=True)
        paths = self.telemetry.export_trace(directory)
        actions_path = os.path.join(directory, "actions.json")
        with open(actions_path, "w", encoding="utf-8") as fh:
            json.dump([record.to_dict() for record in self.run.controller.log], fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(actions_path)
        summary_path = os.path.join(directory, "summary.json")
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(summary_path)
        return paths


def run_scenario(
    script: ScenarioScript,
    mode: str | None = None,
    seed: int | None = None,
    pace: float = 0.0,
    keep_log: bool = False,
) -> RunReport:
    return ScenarioRun(script, mode=mode, seed=seed, pace=pace, keep_log=keep_log).execute()
