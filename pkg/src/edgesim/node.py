"""Topology assembly: FDD radio pairs, the MEC vSwitch, the UE terminal, and
per-flow steering bookkeeping shared by the scenario loader and the controller."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .apps import (
    SMS_CLIENT,
    SMS_SERVER,
    TRANSCODER,
    AppInstance,
    AppManager,
    AppSpec,
    Transcoder,
    VideoServer,
)
from .engine import Engine
from .radio import Packet, Waveform
from .switch import APP, RADIO, Match, Port, Rewrite, VirtualSwitch

UE_ADDRESS = "ue"

DEFAULT_STEERING_PRIORITY = 10
MAX_PORTS = 64


class PortExhaustionError(RuntimeError):
    pass


class UnknownWaveformError(KeyError):
    pass


class UnknownFlowError(KeyError):
    pass


class AlreadyTranscodedError(ValueError):
    pass


class NotTranscodedError(ValueError):
    pass


@dataclass
class RadioPair:
    """One FDD radio: independent downlink and uplink waveforms sharing a label
    and one switch port on the MEC side."""

    label: str
    downlink: Waveform
    uplink: Waveform

    @property
    def port_id(self) -> str:
        return self.label


@dataclass
class FlowSteering:
    flow_id: str
    pair: str  # label of the pair currently carrying the flow
    origin_app: str
    outbound_rule: str  # rule whose terminal output is the radio port
    return_rule: str | None = None  # sms only: radio arrival -> client port
    chain_rule: str | None = None  # app port -> transcoder port
    transcoder_id: str | None = None
    priority: int = DEFAULT_STEERING_PRIORITY


class UeTerminal:
    """Far end of the radio links: terminates flows, hosts responder apps, and
    credits received traffic back to the originating application."""

    def __init__(self, node: "MecNode") -> None:
        self.node = node
        self.id = UE_ADDRESS
        self.apps: dict[str, AppInstance] = {}  # port id -> instance
        self.received_pkts = 0
        self.received_bits = 0

    def add_app(self, instance: AppInstance) -> None:
        self.apps[instance.port] = instance

    def remove_app(self, instance: AppInstance) -> None:
        self.apps.pop(instance.port, None)

    def receive(self, packet: Packet, pair: RadioPair) -> None:
        self.received_pkts += 1
        self.received_bits += packet.size * 8
        app = self.apps.get(packet.dst_port)
        if app is not None:
            app.receive(packet)
            return
        origin = self.node.flow_origin_app(packet.flow_id)
        if isinstance(origin, VideoServer):
            origin.credit_received(packet)

    def send_up(self, packet: Packet) -> None:
        """Responder traffic rides the uplink of whichever pair currently
        carries the flow."""
        pair_label = self.node.flows.get(packet.flow_id)
        if pair_label is None:
            return
        self.node.pairs[pair_label.pair].uplink.enqueue(packet)


class MecNode:
    """One emulated edge host plus its user equipment peer."""

    def __init__(self, engine: Engine, app_latency: float = 0.5) -> None:
        self.engine = engine
        self.switch = VirtualSwitch("mec-vswitch")
        self.apps = AppManager(engine, instantiation_latency=app_latency)
        self.ue = UeTerminal(self)
        self.pairs: dict[str, RadioPair] = {}
        self.flows: dict[str, FlowSteering] = {}
        self.app_waveform: dict[str, str] = {}  # requested initial placement

    # -- construction --------------------------------------------------------

    def add_radio_pair(
        self,
        label: str,
        raw_capacity: float,
        code_rate: Fraction = Fraction(1),
        channel_per: float = 0.0,
        correction_threshold: float = 0.10,
        queue_capacity: int = 65536,
        propagation: float = 0.001,
    ) -> RadioPair:
        if label in self.pairs:
            raise ValueError(f"radio pair {label!r} already defined")
        downlink = Waveform(
            self.engine, label, raw_capacity, code_rate, channel_per,
            correction_threshold, queue_capacity, propagation,
        )
        uplink = Waveform(
            self.engine, f"{label}-up", raw_capacity, code_rate, 0.0,
            correction_threshold, queue_capacity, propagation,
        )
        pair = RadioPair(label, downlink, uplink)
        downlink.on_deliver = lambda pkt, wf, p=pair: self.ue.receive(pkt, p)
        uplink.on_deliver = lambda pkt, wf, p=pair: self.switch.forward(pkt, in_port=p.port_id)
        self.switch.add_port(
            Port(pair.port_id, RADIO, label), sink=lambda pkt, p=pair: p.downlink.enqueue(pkt)
        )
        self.pairs[label] = pair
        return pair

    def waveform(self, label: str) -> Waveform:
        """Resolve a waveform by label: pair label means its downlink."""
        if label in self.pairs:
            return self.pairs[label].downlink
        for pair in self.pairs.values():
            if pair.uplink.label == label:
                return pair.uplink
        raise UnknownWaveformError(label)

    def all_waveforms(self) -> list[Waveform]:
        out: list[Waveform] = []
        for pair in self.pairs.values():
            out.append(pair.downlink)
            out.append(pair.uplink)
        return out

    # -- app attachment -------------------------------------------------------

    def _check_ports(self) -> None:
        if len(self.switch.ports) + len(self.ue.apps) >= MAX_PORTS:
            raise PortExhaustionError(f"port limit {MAX_PORTS} reached")

    def attach_mec_app(self, instance: AppInstance) -> None:
        self._check_ports()
        instance.port = instance.id
        self.switch.add_port(Port(instance.id, APP, instance.id), sink=instance.receive)
        instance.send = lambda pkt: self.switch.forward(pkt)

    def attach_ue_app(self, instance: AppInstance) -> None:
        self._check_ports()
        instance.port = instance.id
        instance.send = self.ue.send_up
        self.ue.add_app(instance)

    def detach_app(self, instance: AppInstance) -> None:
        if instance.port in self.switch.ports:
            self.switch.remove_port(instance.port)
        else:
            self.ue.remove_app(instance)

    def flow_origin_app(self, flow_id: str) -> AppInstance | None:
        steering = self.flows.get(flow_id)
        if steering is None:
            return None
        return self.apps.instances.get(steering.origin_app)

    def flow_waveform(self, flow_id: str) -> str:
        steering = self.flows.get(flow_id)
        if steering is None:
            raise UnknownFlowError(flow_id)
        return steering.pair

    # -- app lifecycle + steering ----------------------------------------------

    def start_app(self, spec: AppSpec, app_id: str, waveform: str = "") -> AppInstance:
        """Instantiate an app and install the flow rules that place its traffic
        on the requested waveform."""
        if spec.kind == SMS_SERVER:
            return self.apps.instantiate(spec, self.attach_ue_app, app_id)

        instance = self.apps.instantiate(spec, self.attach_mec_app, app_id)
        if spec.kind == TRANSCODER:
            return instance  # chained explicitly by the controller

        if waveform not in self.pairs:
            raise UnknownWaveformError(waveform)
        pair = self.pairs[waveform]
        flow_id = instance.flow_id  # type: ignore[attr-defined]
        priority = DEFAULT_STEERING_PRIORITY
        outbound = self.switch.install_rule(
            priority, Match(flow_id=flow_id, src_port=instance.port), output=pair.port_id
        )
        return_rule = None
        if spec.kind == SMS_CLIENT:
            return_rule = self.switch.install_rule(
                priority, Match(flow_id=flow_id, src_port=pair.port_id), output=instance.port
            )
        self.flows[flow_id] = FlowSteering(
            flow_id=flow_id,
            pair=waveform,
            origin_app=app_id,
            outbound_rule=outbound,
            return_rule=return_rule,
            priority=priority,
        )
        self.app_waveform[app_id] = waveform
        return instance

    def stop_app(self, app_id: str) -> None:
        self.apps.teardown(app_id, self.detach_app)

    # -- control-plane reconfiguration ------------------------------------------

    def move_flow(self, flow_id: str, target: str) -> None:
        """Make-before-break: install the new radio-facing rule(s) one priority
        level up, then remove the old ones."""
        steering = self.flows.get(flow_id)
        if steering is None:
            raise UnknownFlowError(flow_id)
        if target not in self.pairs:
            raise UnknownWaveformError(target)
        new_pair = self.pairs[target]
        old_outbound = self.switch.rules[steering.outbound_rule]
        new_priority = steering.priority + 1
        new_outbound = self.switch.install_rule(
            new_priority, old_outbound.match, old_outbound.rewrites, output=new_pair.port_id
        )
        new_return = None
        if steering.return_rule is not None:
            new_return = self.switch.install_rule(
                new_priority,
                Match(flow_id=flow_id, src_port=new_pair.port_id),
                output=self.switch.rules[steering.return_rule].output,
            )
        self.switch.remove_rule(steering.outbound_rule)
        if steering.return_rule is not None:
            self.switch.remove_rule(steering.return_rule)
        steering.outbound_rule = new_outbound
        steering.return_rule = new_return
        steering.pair = target
        steering.priority = new_priority

    def insert_transcoder(self, flow_id: str, target_bitrate: float, processing_delay: float = 0.020) -> Transcoder:
        """Chain origin app -> transcoder -> radio for the flow.

        Order: instantiate the transcoder, install the two chain rules above the
        direct rule, then remove the direct rule."""
        steering = self.flows.get(flow_id)
        if steering is None:
            raise UnknownFlowError(flow_id)
        if steering.transcoder_id is not None:
            raise AlreadyTranscodedError(f"flow {flow_id!r} already runs through {steering.transcoder_id}")
        origin = self.apps.get(steering.origin_app)
        spec = AppSpec(
            kind=TRANSCODER,
            input_flow=flow_id,
            target_bitrate=target_bitrate,
            processing_delay=processing_delay,
            packet_size=origin.spec.packet_size,
        )
        transcoder = self.apps.instantiate(spec, self.attach_mec_app, f"{flow_id}-transcoder")
        pair = self.pairs[steering.pair]
        new_priority = steering.priority + 1
        chain_rule = self.switch.install_rule(
            new_priority,
            Match(flow_id=flow_id, src_port=origin.port),
            rewrites=(Rewrite("dst_port", transcoder.port),),
            output=transcoder.port,
        )
        outbound = self.switch.install_rule(
            new_priority,
            Match(flow_id=flow_id, src_port=transcoder.port),
            rewrites=(Rewrite("dst_port", UE_ADDRESS),),
            output=pair.port_id,
        )
        self.switch.remove_rule(steering.outbound_rule)
        steering.chain_rule = chain_rule
        steering.outbound_rule = outbound
        steering.transcoder_id = transcoder.id
        steering.priority = new_priority
        return transcoder  # type: ignore[return-value]

    def remove_transcoder(self, flow_id: str) -> None:
        steering = self.flows.get(flow_id)
        if steering is None:
            raise UnknownFlowError(flow_id)
        if steering.transcoder_id is None:
            raise NotTranscodedError(f"flow {flow_id!r} has no transcoder")
        origin = self.apps.get(steering.origin_app)
        pair = self.pairs[steering.pair]
        new_priority = steering.priority + 1
        direct = self.switch.install_rule(
            new_priority, Match(flow_id=flow_id, src_port=origin.port), output=pair.port_id
        )
        self.switch.remove_rule(steering.chain_rule)
        self.switch.remove_rule(steering.outbound_rule)
        self.stop_app(steering.transcoder_id)
        steering.outbound_rule = direct
        steering.chain_rule = None
        steering.transcoder_id = None
        steering.priority = new_priority

    def set_code_rate(self, waveform_label: str, rate: Fraction) -> None:
        """Reconfigure both directions of the named radio."""
        if waveform_label not in self.pairs:
            raise UnknownWaveformError(waveform_label)
        pair = self.pairs[waveform_label]
        pair.downlink.set_code_rate(rate)
        pair.uplink.set_code_rate(rate)

    def inject_channel_error(self, waveform_label: str, mean_per: float) -> None:
        self.waveform(waveform_label).inject_channel_error(mean_per)
