"""Edge applications: critical SMS pair, CBR video servers, rate-converting transcoder.

Instances are single-purpose blocks attached to switch ports; the App Manager
instantiates, reconfigures and tears them down.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

from .engine import Engine, EventHandle
from .radio import Packet

SMS_SERVER = "sms_server"
SMS_CLIENT = "sms_client"
VIDEO_SERVER = "video_server"
TRANSCODER = "transcoder"

APP_KINDS = (SMS_SERVER, SMS_CLIENT, VIDEO_SERVER, TRANSCODER)

DEFAULT_INSTANTIATION_LATENCY = 0.5
DEFAULT_PROCESSING_DELAY = 0.020
DEFAULT_VIDEO_PACKET = 1200

SAMPLE_RETENTION = 120.0

STARTING = "starting"
RUNNING = "running"
STOPPED = "stopped"


class InvalidAppSpecError(ValueError):
    pass


class UnknownAppError(KeyError):
    pass


class WrongAppKindError(TypeError):
    pass


@dataclass
class AppSpec:
    kind: str
    # sms pair
    request_size: int = 100
    response_size: int = 100
    interval: float = 1.0
    timeout: float = 2.0
    server_id: str = ""  # sms_client: id of its peer responder
    # video
    bitrate: float = 0.0
    packet_size: int = DEFAULT_VIDEO_PACKET
    flow_id: str = ""
    # transcoder
    input_flow: str = ""
    target_bitrate: float = 0.0
    processing_delay: float = DEFAULT_PROCESSING_DELAY
    # policy hint: lowest bitrate this flow tolerates with acceptable quality
    transcode_bitrate: float = 0.0

    def validate(self) -> None:
        if self.kind not in APP_KINDS:
            raise InvalidAppSpecError(f"unknown app kind {self.kind!r}")
        if self.kind in (SMS_SERVER, SMS_CLIENT):
            if self.request_size <= 0 or self.response_size <= 0:
                raise InvalidAppSpecError("sms request/response sizes must be positive")
            if self.interval <= 0 or self.timeout <= 0:
                raise InvalidAppSpecError("sms interval and timeout must be positive")
        if self.kind == VIDEO_SERVER:
            if self.bitrate <= 0:
                raise InvalidAppSpecError(f"video bitrate must be positive, got {self.bitrate}")
            if self.packet_size <= 0:
                raise InvalidAppSpecError("video packet size must be positive")
        if self.kind == TRANSCODER:
            if not self.input_flow:
                raise InvalidAppSpecError("transcoder needs an input flow")
            if self.target_bitrate <= 0:
                raise InvalidAppSpecError("transcoder target bitrate must be positive")
            if self.processing_delay < 0:
                raise InvalidAppSpecError("processing delay cannot be negative")


class AppInstance:
    """Base application block: one switch port, a send hook, per-kind KPIs."""

    def __init__(self, engine: Engine, app_id: str, spec: AppSpec) -> None:
        self.engine = engine
        self.id = app_id
        self.spec = spec
        self.port: str = ""
        self.send: Callable[[Packet], None] = lambda p: None
        self.state = STARTING
        self._timers: list[EventHandle] = []

    def _after(self, delay: float, action: Callable[[], None], label: str) -> EventHandle:
        handle = self.engine.schedule(delay, action, label)
        self._timers.append(handle)
        if len(self._timers) > 256:
            self._timers = [h for h in self._timers if not h.cancelled and h.fire_time > self.engine.now]
        return handle

    def on_ready(self) -> None:
        self.state = RUNNING

    def receive(self, packet: Packet) -> None:  # pragma: no cover - overridden
        pass

    def stop(self) -> None:
        self.state = STOPPED
        for handle in self._timers:
            handle.cancel()
        self._timers.clear()

    def kpi_snapshot(self) -> dict:
        return {}


class SmsServer(AppInstance):
    """Responds to each request with a fixed-size reply carrying the same sequence number."""

    def __init__(self, engine: Engine, app_id: str, spec: AppSpec) -> None:
        super().__init__(engine, app_id, spec)
        self.served = 0

    def receive(self, packet: Packet) -> None:
        if self.state != RUNNING:
            return
        self.served += 1
        response = Packet(
            flow_id=packet.flow_id,
            src_port=self.port,
            dst_port=packet.src_port,
            size=self.spec.response_size,
            created_at=self.engine.now,
            seq=packet.seq,
        )
        self.send(response)

    def kpi_snapshot(self) -> dict:
        return {"served": self.served}


class SmsClient(AppInstance):
    """Emits one request per interval and measures round-trip time end to end.

    A round resolves either when the response arrives (RTT sample) or when the
    timeout fires; timeouts count as failures.
    """

    def __init__(self, engine: Engine, app_id: str, spec: AppSpec, server_address: str) -> None:
        super().__init__(engine, app_id, spec)
        self.server_address = server_address
        self.flow_id = spec.flow_id or app_id
        self.attempts = 0
        self.successes = 0
        self.timeouts = 0
        self._next_seq = 0
        self._pending: dict[int, tuple[float, EventHandle]] = {}
        # (resolve_time, rtt) for delivered rounds; (resolve_time, ok) for all rounds.
        self.rtt_samples: deque[tuple[float, float]] = deque()
        self.resolved: deque[tuple[float, bool]] = deque()

    def on_ready(self) -> None:
        super().on_ready()
        self._round()

    def _round(self) -> None:
        if self.state != RUNNING:
            return
        seq = self._next_seq
        self._next_seq += 1
        sent_at = self.engine.now
        timeout_handle = self._after(
            self.spec.timeout, lambda s=seq: self._timeout(s), f"app:{self.id}:timeout"
        )
        self._pending[seq] = (sent_at, timeout_handle)
        request = Packet(
            flow_id=self.flow_id,
            src_port=self.port,
            dst_port=self.server_address,
            size=self.spec.request_size,
            created_at=sent_at,
            seq=seq,
        )
        self.send(request)
        self._after(self.spec.interval, self._round, f"app:{self.id}:round")

    def receive(self, packet: Packet) -> None:
        entry = self._pending.pop(packet.seq, None)
        if entry is None:
            return  # response landed after its timeout; the round already failed
        sent_at, timeout_handle = entry
        timeout_handle.cancel()
        now = self.engine.now
        rtt = now - sent_at
        self.attempts += 1
        self.successes += 1
        self.rtt_samples.append((now, rtt))
        self.resolved.append((now, True))
        self._prune()

    def _timeout(self, seq: int) -> None:
        if self._pending.pop(seq, None) is None:
            return
        now = self.engine.now
        self.attempts += 1
        self.timeouts += 1
        self.resolved.append((now, False))
        self._prune()

    def _prune(self) -> None:
        horizon = self.engine.now - SAMPLE_RETENTION
        while self.rtt_samples and self.rtt_samples[0][0] < horizon:
            self.rtt_samples.popleft()
        while self.resolved and self.resolved[0][0] < horizon:
            self.resolved.popleft()

    def window_rtt_max(self, window: float) -> float | None:
        t0 = self.engine.now - window
        values = [rtt for t, rtt in self.rtt_samples if t > t0]
        return max(values) if values else None

    def window_success_rate(self, window: float) -> float | None:
        t0 = self.engine.now - window
        rounds = [ok for t, ok in self.resolved if t > t0]
        if not rounds:
            return None
        return sum(rounds) / len(rounds)

    def kpi_snapshot(self) -> dict:
        return {
            "attempts": self.attempts,
            "successes": self.successes,
            "timeouts": self.timeouts,
            "rtt_last": self.rtt_samples[-1][1] if self.rtt_samples else None,
        }


class VideoServer(AppInstance):
    """Constant-bitrate source: one packet every packet_size*8/bitrate seconds."""

    def __init__(self, engine: Engine, app_id: str, spec: AppSpec) -> None:
        super().__init__(engine, app_id, spec)
        self.flow_id = spec.flow_id or app_id
        self.bitrate = spec.bitrate
        self.emitted_pkts = 0
        self.emitted_bits = 0
        self.received_pkts = 0
        self.received_bits = 0

    @property
    def emission_interval(self) -> float:
        return self.spec.packet_size * 8 / self.bitrate

    def on_ready(self) -> None:
        super().on_ready()
        self._emit()

    def _emit(self) -> None:
        if self.state != RUNNING:
            return
        packet = Packet(
            flow_id=self.flow_id,
            src_port=self.port,
            dst_port="ue",
            size=self.spec.packet_size,
            created_at=self.engine.now,
        )
        self.emitted_pkts += 1
        self.emitted_bits += packet.size * 8
        self.send(packet)
        self._after(self.emission_interval, self._emit, f"app:{self.id}:emit")

    def set_bitrate(self, bitrate: float) -> None:
        """Takes effect from the next emission onward."""
        if bitrate <= 0:
            raise InvalidAppSpecError(f"bitrate must be positive, got {bitrate}")
        self.bitrate = bitrate

    def credit_received(self, packet: Packet) -> None:
        self.received_pkts += 1
        self.received_bits += packet.size * 8

    def kpi_snapshot(self) -> dict:
        return {
            "bitrate": self.bitrate,
            "emitted_pkts": self.emitted_pkts,
            "emitted_bits": self.emitted_bits,
            "received_pkts": self.received_pkts,
            "received_bits": self.received_bits,
        }


class Transcoder(AppInstance):
    """Rate converter: accumulates input bits and re-emits the flow as CBR at the
    target bitrate, each output delayed by the processing time. Excess input
    beyond a small working buffer is discarded (quality reduction, not queueing)."""

    BUFFER_PACKETS = 4

    def __init__(self, engine: Engine, app_id: str, spec: AppSpec) -> None:
        super().__init__(engine, app_id, spec)
        self.target_bitrate = spec.target_bitrate
        self.in_pkts = 0
        self.in_bits = 0
        self.out_pkts = 0
        self.out_bits = 0
        self.discarded_bits = 0
        self.foreign_drops = 0
        self._available_bits = 0.0
        self._next_allowed = 0.0
        self._emission_armed = False

    @property
    def packet_bits(self) -> int:
        return self.spec.packet_size * 8

    def receive(self, packet: Packet) -> None:
        if packet.flow_id != self.spec.input_flow:
            self.foreign_drops += 1
            return
        self.in_pkts += 1
        self.in_bits += packet.size * 8
        self._after(
            self.spec.processing_delay,
            lambda bits=packet.size * 8: self._absorb(bits),
            f"app:{self.id}:process",
        )

    def _absorb(self, bits: int) -> None:
        if self.state == STOPPED:
            return
        cap = self.BUFFER_PACKETS * self.packet_bits
        self._available_bits += bits
        if self._available_bits > cap:
            self.discarded_bits += int(self._available_bits - cap)
            self._available_bits = cap
        self._arm_emission()

    def _arm_emission(self) -> None:
        if self._emission_armed or self.state == STOPPED:
            return
        if self._available_bits < self.packet_bits:
            return
        delay = max(0.0, self._next_allowed - self.engine.now)
        self._emission_armed = True
        self._after(delay, self._emit, f"app:{self.id}:emit")

    def _emit(self) -> None:
        self._emission_armed = False
        if self.state == STOPPED or self._available_bits < self.packet_bits:
            return
        self._available_bits -= self.packet_bits
        packet = Packet(
            flow_id=self.spec.input_flow,
            src_port=self.port,
            dst_port=self.port,
            size=self.spec.packet_size,
            created_at=self.engine.now,
            transcoded=True,
        )
        self.out_pkts += 1
        self.out_bits += packet.size * 8
        self.send(packet)
        self._next_allowed = self.engine.now + self.packet_bits / self.target_bitrate
        self._arm_emission()

    def set_bitrate(self, bitrate: float) -> None:
        if bitrate <= 0:
            raise InvalidAppSpecError(f"bitrate must be positive, got {bitrate}")
        self.target_bitrate = bitrate

    def kpi_snapshot(self) -> dict:
        return {
            "target_bitrate": self.target_bitrate,
            "in_pkts": self.in_pkts,
            "in_bits": self.in_bits,
            "out_pkts": self.out_pkts,
            "out_bits": self.out_bits,
            "discarded_bits": self.discarded_bits,
            "foreign_drops": self.foreign_drops,
        }


class AppManager:
    """Instantiates, configures, reports on and tears down application instances."""

    def __init__(self, engine: Engine, instantiation_latency: float = DEFAULT_INSTANTIATION_LATENCY) -> None:
        self.engine = engine
        self.instantiation_latency = instantiation_latency
        self.instances: dict[str, AppInstance] = {}
        self.frozen_kpis: dict[str, dict] = {}
        self._counter = 0

    def _make_instance(self, app_id: str, spec: AppSpec) -> AppInstance:
        if spec.kind == SMS_SERVER:
            return SmsServer(self.engine, app_id, spec)
        if spec.kind == SMS_CLIENT:
            server = self.instances.get(spec.server_id)
            if server is None or server.spec.kind != SMS_SERVER:
                raise InvalidAppSpecError(
                    f"sms_client {app_id!r} needs an existing sms_server peer, got {spec.server_id!r}"
                )
            return SmsClient(self.engine, app_id, spec, server_address=server.port)
        if spec.kind == VIDEO_SERVER:
            return VideoServer(self.engine, app_id, spec)
        return Transcoder(self.engine, app_id, spec)

    def instantiate(
        self,
        spec: AppSpec,
        attach: Callable[[AppInstance], None],
        app_id: str = "",
    ) -> AppInstance:
        """Create an instance, attach it to a fresh port via `attach`, and
        schedule its first activity after the instantiation latency."""
        spec.validate()
        if not app_id:
            self._counter += 1
            app_id = f"{spec.kind}-{self._counter}"
        if app_id in self.instances:
            raise InvalidAppSpecError(f"app id {app_id!r} already in use")
        instance = self._make_instance(app_id, spec)
        attach(instance)  # sets instance.port and instance.send; may raise on exhaustion
        self.instances[app_id] = instance
        self.engine.schedule(self.instantiation_latency, instance.on_ready, f"app:{app_id}:ready")
        return instance

    def get(self, app_id: str) -> AppInstance:
        instance = self.instances.get(app_id)
        if instance is None:
            raise UnknownAppError(app_id)
        return instance

    def teardown(self, app_id: str, detach: Callable[[AppInstance], None]) -> None:
        instance = self.get(app_id)
        instance.stop()
        self.frozen_kpis[app_id] = instance.kpi_snapshot()
        detach(instance)
        del self.instances[app_id]

    def set_bitrate(self, app_id: str, bitrate: float) -> None:
        instance = self.get(app_id)
        if not isinstance(instance, (VideoServer, Transcoder)):
            raise WrongAppKindError(f"{app_id} is a {instance.spec.kind}; only video sources and transcoders have a bitrate")
        instance.set_bitrate(bitrate)
