"""MEC control plane: validated control actions, the action log, and the
rule-based policy engine that mirrors a human operator's playbook."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Union

from .apps import Transcoder, VideoServer
from .node import MecNode
from .radio import ALLOWED_CODE_RATES
from .telemetry import SlaReport, TelemetryPlane, VIOLATED

MANUAL = "manual"
AUTOMATED = "automated"
SCRIPTED = "scripted"
MIXED = "mixed"

MODES = (MANUAL, AUTOMATED, SCRIPTED, MIXED)

DEFAULT_COOLDOWN = 15.0
DEFAULT_LOAD_BOUND = 0.95


class ActionRejected(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class MoveFlow:
    flow_id: str
    target_waveform: str


@dataclass(frozen=True)
class SetCodeRate:
    waveform: str
    rate: Fraction


@dataclass(frozen=True)
class InsertTranscoder:
    flow_id: str
    target_bitrate: float


@dataclass(frozen=True)
class SetAppBitrate:
    app_id: str
    bitrate: float


@dataclass(frozen=True)
class RemoveTranscoder:
    flow_id: str


@dataclass(frozen=True)
class SetChannelError:
    """Scenario-cue only: not available to the policy or the operator."""

    waveform: str
    per: float


ControlAction = Union[MoveFlow, SetCodeRate, InsertTranscoder, SetAppBitrate, RemoveTranscoder, SetChannelError]


def action_to_dict(action: ControlAction) -> dict:
    if isinstance(action, MoveFlow):
        return {"type": "move_flow", "flow": action.flow_id, "target": action.target_waveform}
    if isinstance(action, SetCodeRate):
        return {"type": "set_code_rate", "waveform": action.waveform, "rate": str(action.rate)}
    if isinstance(action, InsertTranscoder):
        return {"type": "insert_transcoder", "flow": action.flow_id, "bitrate": action.target_bitrate}
    if isinstance(action, SetAppBitrate):
        return {"type": "set_app_bitrate", "app": action.app_id, "bitrate": action.bitrate}
    if isinstance(action, RemoveTranscoder):
        return {"type": "remove_transcoder", "flow": action.flow_id}
    if isinstance(action, SetChannelError):
        return {"type": "set_channel_error", "waveform": action.waveform, "per": action.per}
    raise TypeError(f"unknown action {action!r}")


def action_from_dict(data: dict) -> ControlAction:
    kind = data.get("type")
    if kind == "move_flow":
        return MoveFlow(data["flow"], data["target"])
    if kind == "set_code_rate":
        return SetCodeRate(data["waveform"], Fraction(data["rate"]))
    if kind == "insert_transcoder":
        return InsertTranscoder(data["flow"], float(data["bitrate"]))
    if kind == "set_app_bitrate":
        return SetAppBitrate(data["app"], float(data["bitrate"]))
    if kind == "remove_transcoder":
        return RemoveTranscoder(data["flow"])
    if kind == "set_channel_error":
        return SetChannelError(data["waveform"], float(data["per"]))
    raise ValueError(f"unknown action type {kind!r}")


@dataclass
class ActionRecord:
    time: float
    action: ControlAction
    initiator: str  # 'operator:<id>' | 'policy:<rule>' | 'scenario'
    outcome: str  # 'ok' | 'rejected: <reason>'

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "action": action_to_dict(self.action),
            "initiator": self.initiator,
            "outcome": self.outcome,
        }


# -- policy engine ---------------------------------------------------------


@dataclass
class WaveformView:
    label: str
    effective_capacity: float
    offered_bps: float
    code_rate: Fraction
    residual_per: float  # last measured value with sufficient samples


@dataclass
class FlowView:
    flow_id: str
    pair: str
    rate: float
    transcoded: bool
    transcode_floor: float
    critical: bool  # carries an RTT-bound SLA
    success_bound: float | None
    app_id: str


@dataclass
class PolicyContext:
    waveforms: dict[str, WaveformView]
    flows: dict[str, FlowView]
    details: dict[str, dict[str, str]]  # app -> metric -> verdict
    load_bound: float

    def headroom(self, label: str) -> float:
        wf = self.waveforms[label]
        return wf.effective_capacity * self.load_bound - wf.offered_bps

    def per_compatible(self, label: str, flow: FlowView) -> bool:
        if flow.success_bound is None:
            return True
        return self.waveforms[label].residual_per <= 1.0 - flow.success_bound

    def move_targets(self, flow: FlowView) -> list[str]:
        """Other waveforms able to carry the flow without breaking its
        reliability bound, best headroom first."""
        labels = [
            label
            for label in self.waveforms
            if label != flow.pair and self.per_compatible(label, flow)
        ]
        return sorted(labels, key=lambda lb: (-self.headroom(lb), lb))


@dataclass
class PolicyRule:
    id: str
    priority: int
    decide: Callable[[PolicyContext], ControlAction | None]
    cooldown: float = DEFAULT_COOLDOWN

    def __repr__(self) -> str:  # pragma: no cover
        return f"PolicyRule({self.id}, prio={self.priority})"


def _violated_apps(ctx: PolicyContext, metric: str) -> list[str]:
    return sorted(app for app, detail in ctx.details.items() if detail.get(metric) == VIOLATED)


def _flow_of_app(ctx: PolicyContext, app_id: str) -> FlowView | None:
    for flow in ctx.flows.values():
        if flow.app_id == app_id:
            return flow
    return None


def rule_rtt_rescue(ctx: PolicyContext) -> ControlAction | None:
    """R1: an RTT-bound SLA is breached; evict the largest non-critical flow
    sharing that waveform onto the best-headroom alternative (even an
    insufficient one: restoring the critical SLA comes first, load rules
    clean up afterwards)."""
    for app_id in _violated_apps(ctx, "rtt_max"):
        victim = _flow_of_app(ctx, app_id)
        if victim is None:
            continue
        others = [
            f for f in ctx.flows.values() if f.pair == victim.pair and not f.critical
        ]
        others.sort(key=lambda f: (-f.rate, f.flow_id))
        for culprit in others:
            targets = ctx.move_targets(culprit)
            if targets:
                return MoveFlow(culprit.flow_id, targets[0])
    return None


def rule_fec_enable(ctx: PolicyContext) -> ControlAction | None:
    """R2: reliability SLA breached by channel errors and the waveform still
    runs uncoded; halving the code rate trades capacity for correction."""
    for app_id in _violated_apps(ctx, "success_rate"):
        flow = _flow_of_app(ctx, app_id)
        if flow is None or flow.success_bound is None:
            continue
        wf = ctx.waveforms[flow.pair]
        if wf.residual_per > 1.0 - flow.success_bound and wf.code_rate == 1:
            return SetCodeRate(flow.pair, Fraction(1, 2))
    return None


def rule_move_off_bad_channel(ctx: PolicyContext) -> ControlAction | None:
    """R3: reliability breached, coding already enabled (a further reduction
    would not correct more), so move the affected flow to a cleaner waveform."""
    for app_id in _violated_apps(ctx, "success_rate"):
        flow = _flow_of_app(ctx, app_id)
        if flow is None or flow.success_bound is None:
            continue
        wf = ctx.waveforms[flow.pair]
        if wf.residual_per > 1.0 - flow.success_bound and wf.code_rate < 1:
            targets = ctx.move_targets(flow)
            if targets:
                return MoveFlow(flow.flow_id, targets[0])
    return None


def rule_relieve_load(ctx: PolicyContext) -> ControlAction | None:
    """R4: load bound breached; move a flow that fits elsewhere, otherwise
    transcode the largest untranscoded flow that has a quality floor."""
    for app_id in _violated_apps(ctx, "waveform_load"):
        breached = _flow_of_app(ctx, app_id)
        if breached is None:
            continue
        locals_ = [f for f in ctx.flows.values() if f.pair == breached.pair and not f.critical]
        locals_.sort(key=lambda f: (-f.rate, f.flow_id))
        for flow in locals_:
            for target in ctx.move_targets(flow):
                if ctx.headroom(target) >= flow.rate:
                    return MoveFlow(flow.flow_id, target)
        for flow in locals_:
            if not flow.transcoded and flow.transcode_floor > 0:
                return InsertTranscoder(flow.flow_id, flow.transcode_floor)
    return None


def default_rules(cooldown: float = DEFAULT_COOLDOWN) -> list[PolicyRule]:
    return [
        PolicyRule("R1-rtt-rescue", 1, rule_rtt_rescue, cooldown),
        PolicyRule("R2-fec-enable", 2, rule_fec_enable, cooldown),
        PolicyRule("R3-move-off-bad-channel", 3, rule_move_off_bad_channel, cooldown),
        PolicyRule("R4-relieve-load", 4, rule_relieve_load, cooldown),
    ]


class PolicyEngine:
    """At most one action per step: the highest-priority eligible rule fires and
    then stays silent for its cooldown."""

    def __init__(self, rules: list[PolicyRule] | None = None) -> None:
        self.rules = sorted(rules if rules is not None else default_rules(), key=lambda r: r.priority)
        self.last_fired: dict[str, float] = {}

    def reset_cooldowns(self) -> None:
        self.last_fired.clear()

    def step(self, now: float, report: SlaReport, ctx: PolicyContext) -> list[tuple[PolicyRule, ControlAction]]:
        if report.fraction_satisfied is None or report.fraction_satisfied >= 1.0:
            return []
        for rule in self.rules:
            fired_at = self.last_fired.get(rule.id)
            if fired_at is not None and now - fired_at < rule.cooldown:
                continue
            action = rule.decide(ctx)
            if action is not None:
                self.last_fired[rule.id] = now
                return [(rule, action)]
        return []


# -- controller --------------------------------------------------------------


class Controller:
    """Validates and orchestrates control actions; in automated/mixed mode runs
    the policy engine on every SLA report."""

    def __init__(
        self,
        node: MecNode,
        telemetry: TelemetryPlane,
        mode: str = MANUAL,
        policy: PolicyEngine | None = None,
        load_bound: float = DEFAULT_LOAD_BOUND,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.node = node
        self.engine = node.engine
        self.telemetry = telemetry
        self.mode = mode
        self.policy = policy or PolicyEngine()
        self.load_bound = load_bound
        self.log: list[ActionRecord] = []
        self.on_action: list[Callable[[ActionRecord], None]] = []
        if mode in (AUTOMATED, MIXED):
            telemetry.on_report.append(self.on_report)

    # -- validation + execution ------------------------------------------------

    def _execute(self, action: ControlAction) -> None:
        node = self.node
        if isinstance(action, MoveFlow):
            steering = node.flows.get(action.flow_id)
            if steering is None:
                raise ActionRejected(f"unknown flow {action.flow_id!r}")
            if action.target_waveform not in node.pairs:
                raise ActionRejected(f"unknown waveform {action.target_waveform!r}")
            if steering.pair == action.target_waveform:
                raise ActionRejected(
                    f"no-op: flow {action.flow_id!r} already on {action.target_waveform!r}"
                )
            node.move_flow(action.flow_id, action.target_waveform)
        elif isinstance(action, SetCodeRate):
            if action.waveform not in node.pairs:
                raise ActionRejected(f"unknown waveform {action.waveform!r}")
            if action.rate not in ALLOWED_CODE_RATES:
                raise ActionRejected(f"unsupported code rate {action.rate}")
            if node.pairs[action.waveform].downlink.code_rate == action.rate:
                raise ActionRejected(f"no-op: {action.waveform!r} already at rate {action.rate}")
            node.set_code_rate(action.waveform, action.rate)
        elif isinstance(action, InsertTranscoder):
            steering = node.flows.get(action.flow_id)
            if steering is None:
                raise ActionRejected(f"unknown flow {action.flow_id!r}")
            if steering.transcoder_id is not None:
                raise ActionRejected(f"flow {action.flow_id!r} is already transcoded")
            origin = node.apps.instances.get(steering.origin_app)
            if isinstance(origin, VideoServer) and action.target_bitrate >= origin.bitrate:
                raise ActionRejected(
                    f"target bitrate {action.target_bitrate} must be below the flow's current {origin.bitrate}"
                )
            node.insert_transcoder(action.flow_id, action.target_bitrate)
        elif isinstance(action, SetAppBitrate):
            instance = node.apps.instances.get(action.app_id)
            if instance is None:
                raise ActionRejected(f"unknown app {action.app_id!r}")
            if not isinstance(instance, (VideoServer, Transcoder)):
                raise ActionRejected(f"{action.app_id!r} is a {instance.spec.kind}; it has no bitrate")
            current = instance.bitrate if isinstance(instance, VideoServer) else instance.target_bitrate
            if action.bitrate == current:
                raise ActionRejected(f"no-op: {action.app_id!r} already at {action.bitrate} bits/s")
            if action.bitrate <= 0:
                raise ActionRejected(f"bitrate must be positive, got {action.bitrate}")
            node.apps.set_bitrate(action.app_id, action.bitrate)
        elif isinstance(action, RemoveTranscoder):
            steering = node.flows.get(action.flow_id)
            if steering is None:
                raise ActionRejected(f"unknown flow {action.flow_id!r}")
            if steering.transcoder_id is None:
                raise ActionRejected(f"flow {action.flow_id!r} is not transcoded")
            node.remove_transcoder(action.flow_id)
        elif isinstance(action, SetChannelError):
            try:
                node.inject_channel_error(action.waveform, action.per)
            except KeyError:
                raise ActionRejected(f"unknown waveform {action.waveform!r}") from None
            except ValueError as exc:
                raise ActionRejected(str(exc)) from None
        else:
            raise ActionRejected(f"unknown action {action!r}")

    def apply(self, action: ControlAction, initiator: str = "operator") -> ActionRecord:
        """Validate and execute atomically at the current event boundary; every
        attempt is logged with its outcome."""
        if isinstance(action, SetChannelError) and initiator != "scenario":
            record = ActionRecord(self.engine.now, action, initiator, "rejected: scenario-only action")
            self._record(record)
            raise ActionRejected("scenario-only action")
        try:
            self._execute(action)
        except ActionRejected as exc:
            self._record(ActionRecord(self.engine.now, action, initiator, f"rejected: {exc.reason}"))
            raise
        record = ActionRecord(self.engine.now, action, initiator, "ok")
        self._record(record)
        return record

    def _record(self, record: ActionRecord) -> None:
        self.log.append(record)
        for hook in self.on_action:
            hook(record)

    def submit_manual(self, action: ControlAction, operator_id: str = "operator") -> ActionRecord:
        if self.mode not in (MANUAL, MIXED):
            raise ActionRejected(f"operator control is disabled in {self.mode} mode")
        record = self.apply(action, initiator=f"operator:{operator_id}")
        if self.mode == MIXED:
            self.policy.reset_cooldowns()
        return record

    # -- automated mode -----------------------------------------------------------

    def build_context(self, report: SlaReport) -> PolicyContext:
        waveforms = {}
        for label, pair in self.node.pairs.items():
            kpis = pair.downlink.sample_kpis(10.0)
            waveforms[label] = WaveformView(
                label=label,
                effective_capacity=pair.downlink.effective_capacity,
                offered_bps=kpis.offered_bps,
                code_rate=pair.downlink.code_rate,
                residual_per=self.telemetry.per_view(label, pair.downlink.last_rate_change),
            )
        flows = {}
        for flow_id, steering in self.node.flows.items():
            origin = self.node.apps.instances.get(steering.origin_app)
            if origin is None:
                continue
            if steering.transcoder_id is not None:
                transcoder = self.node.apps.instances.get(steering.transcoder_id)
                rate = transcoder.target_bitrate if isinstance(transcoder, Transcoder) else 0.0
            elif isinstance(origin, VideoServer):
                rate = origin.bitrate
            else:
                rate = origin.spec.request_size * 8 / origin.spec.interval
            sla = self.telemetry.slas.get(steering.origin_app)
            critical = False
            success_bound = None
            if sla is not None:
                for predicate in sla.predicates:
                    if predicate.metric == "rtt_max":
                        critical = True
                    if predicate.metric == "success_rate":
                        success_bound = predicate.bound
            flows[flow_id] = FlowView(
                flow_id=flow_id,
                pair=steering.pair,
                rate=rate,
                transcoded=steering.transcoder_id is not None,
                transcode_floor=origin.spec.transcode_bitrate,
                critical=critical,
                success_bound=success_bound,
                app_id=steering.origin_app,
            )
        return PolicyContext(waveforms, flows, getattr(report, "details", {}), self.load_bound)

    def policy_step(self, report: SlaReport) -> list[ControlAction]:
        ctx = self.build_context(report)
        decisions = self.policy.step(self.engine.now, report, ctx)
        applied = []
        for rule, action in decisions:
            try:
                self.apply(action, initiator=f"policy:{rule.id}")
                applied.append(action)
            except ActionRejected:
                pass  # logged; the rule burned its cooldown on an infeasible pick
        return applied

    def on_report(self, report: SlaReport) -> None:
        if self.mode in (AUTOMATED, MIXED):
            self.policy_step(report)
