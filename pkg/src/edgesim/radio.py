"""Simulated radio links: capacity, code rate, channel error process, FIFO queue, CSI."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .engine import Engine, EventHandle, RandomSource

ALLOWED_CODE_RATES = (Fraction(1), Fraction(1, 2), Fraction(1, 3))

DEFAULT_QUEUE_BYTES = 65536
DEFAULT_CORRECTION_THRESHOLD = 0.10
DEFAULT_PROPAGATION = 0.001

# Windowed-KPI records older than this are discarded.
KPI_RETENTION = 120.0


class UnsupportedCodeRateError(ValueError):
    pass


class ChannelErrorRangeError(ValueError):
    pass


@dataclass
class Packet:
    """Unit of traffic. src/dst/transcoded are the rewritable header fields."""

    flow_id: str
    src_port: str
    dst_port: str
    size: int  # bytes
    created_at: float
    seq: int = 0
    hops: int = 0
    transcoded: bool = False

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"packet size must be positive, got {self.size}")


@dataclass
class RadioKpis:
    """Trailing-window channel state for one waveform."""

    window: float
    load: float
    offered_bps: float
    delivered_bps: float
    residual_per: float
    queue_bytes: int
    insufficient: bool  # no transmissions in window; residual_per is meaningless


@dataclass
class FlowCounters:
    offered_pkts: int = 0
    offered_bits: int = 0
    dropped_queue_pkts: int = 0
    dropped_queue_bits: int = 0
    lost_channel_pkts: int = 0
    lost_channel_bits: int = 0
    delivered_pkts: int = 0
    delivered_bits: int = 0
    in_queue_pkts: int = 0
    in_queue_bits: int = 0


def residual_error_probability(channel_per: float, code_rate: Fraction, threshold: float) -> float:
    """Loss probability after coding: rate 1 passes the channel through, lower
    rates correct up to `threshold` of channel error and leak the excess."""
    if code_rate == 1:
        return channel_per
    if channel_per <= threshold:
        return 0.0
    return min(1.0, channel_per - threshold)


class Waveform:
    """One direction of a radio link: FIFO queue drained at effective capacity,
    with an i.i.d. loss draw per departing packet."""

    def __init__(
        self,
        engine: Engine,
        label: str,
        raw_capacity: float,
        code_rate: Fraction = Fraction(1),
        channel_per: float = 0.0,
        correction_threshold: float = DEFAULT_CORRECTION_THRESHOLD,
        queue_capacity: int = DEFAULT_QUEUE_BYTES,
        propagation: float = DEFAULT_PROPAGATION,
        rng: RandomSource | None = None,
    ) -> None:
        if code_rate not in ALLOWED_CODE_RATES:
            raise UnsupportedCodeRateError(f"code rate {code_rate} not in {ALLOWED_CODE_RATES}")
        if not 0.0 <= channel_per <= 1.0:
            raise ChannelErrorRangeError(f"channel_per must be in [0,1], got {channel_per}")
        self.engine = engine
        self.label = label
        self.raw_capacity = float(raw_capacity)
        self.code_rate = code_rate
        self.channel_per = channel_per
        self.correction_threshold = correction_threshold
        self.queue_capacity = queue_capacity
        self.propagation = propagation
        self.rng = rng or engine.random.substream(f"channel:{label}")
        self.on_deliver: Callable[[Packet, "Waveform"], None] | None = None

        self.queue: deque[Packet] = deque()
        self.queue_bytes = 0
        self.totals = FlowCounters()
        self.per_flow: dict[str, FlowCounters] = {}

        self._departure: EventHandle | None = None
        self._serialize_started = 0.0
        self._serialize_bits_left = 0.0
        self.last_rate_change = float("-inf")

        # (time, bits) / (time, lost) records for trailing-window KPIs.
        self._offered_log: deque[tuple[float, int]] = deque()
        self._delivered_log: deque[tuple[float, int]] = deque()
        self._tx_log: deque[tuple[float, bool]] = deque()
        # Effective-capacity segments: (start_time, bits_per_sec).
        self._capacity_segments: list[tuple[float, float]] = [(engine.now, self.effective_capacity)]

    @property
    def effective_capacity(self) -> float:
        return self.raw_capacity * self.code_rate.numerator / self.code_rate.denominator

    @property
    def residual_per(self) -> float:
        return residual_error_probability(self.channel_per, self.code_rate, self.correction_threshold)

    def _flow(self, flow_id: str) -> FlowCounters:
        counters = self.per_flow.get(flow_id)
        if counters is None:
            counters = self.per_flow[flow_id] = FlowCounters()
        return counters

    # -- traffic path ------------------------------------------------------

    def enqueue(self, packet: Packet) -> str:
        """Append to the FIFO if there is byte room; returns 'accepted' or
        'dropped_queue_full'."""
        now = self.engine.now
        flow = self._flow(packet.flow_id)
        self.totals.offered_pkts += 1
        self.totals.offered_bits += packet.size * 8
        flow.offered_pkts += 1
        flow.offered_bits += packet.size * 8
        self._offered_log.append((now, packet.size * 8))
        self._prune(now)

        if self.queue_bytes + packet.size > self.queue_capacity:
            self.totals.dropped_queue_pkts += 1
            self.totals.dropped_queue_bits += packet.size * 8
            flow.dropped_queue_pkts += 1
            flow.dropped_queue_bits += packet.size * 8
            return "dropped_queue_full"

        self.queue.append(packet)
        self.queue_bytes += packet.size
        self.totals.in_queue_pkts += 1
        self.totals.in_queue_bits += packet.size * 8
        flow.in_queue_pkts += 1
        flow.in_queue_bits += packet.size * 8
        if self._departure is None:
            self._start_serialization()
        return "accepted"

    def _start_serialization(self) -> None:
        head = self.queue[0]
        self._serialize_started = self.engine.now
        self._serialize_bits_left = head.size * 8
        delay = self._serialize_bits_left / self.effective_capacity
        self._departure = self.engine.schedule(delay, self._depart, f"radio:{self.label}:depart")

    def _depart(self) -> None:
        now = self.engine.now
        self._departure = None
        packet = self.queue.popleft()
        self.queue_bytes -= packet.size
        flow = self._flow(packet.flow_id)
        self.totals.in_queue_pkts -= 1
        self.totals.in_queue_bits -= packet.size * 8
        flow.in_queue_pkts -= 1
        flow.in_queue_bits -= packet.size * 8

        lost = self.residual_per > 0 and self.rng.uniform() < self.residual_per
        self._tx_log.append((now, lost))
        if lost:
            self.totals.lost_channel_pkts += 1
            self.totals.lost_channel_bits += packet.size * 8
            flow.lost_channel_pkts += 1
            flow.lost_channel_bits += packet.size * 8
        else:
            self.totals.delivered_pkts += 1
            self.totals.delivered_bits += packet.size * 8
            flow.delivered_pkts += 1
            flow.delivered_bits += packet.size * 8
            self._delivered_log.append((now, packet.size * 8))
            if self.on_deliver is not None:
                handler = self.on_deliver
                self.engine.schedule(
                    self.propagation, lambda p=packet: handler(p, self), f"radio:{self.label}:deliver"
                )
        self._prune(now)
        if self.queue:
            self._start_serialization()

    # -- reconfiguration ---------------------------------------------------

    def set_code_rate(self, rate: Fraction) -> None:
        """Change the code rate; capacity and residual error update immediately
        and an in-flight serialization finishes at the new rate."""
        if rate not in ALLOWED_CODE_RATES:
            raise UnsupportedCodeRateError(f"code rate {rate} not in {ALLOWED_CODE_RATES}")
        if rate == self.code_rate:
            return
        now = self.engine.now
        if self._departure is not None:
            elapsed = now - self._serialize_started
            self._serialize_bits_left -= elapsed * self.effective_capacity
            self._serialize_bits_left = max(self._serialize_bits_left, 0.0)
            self._departure.cancel()
        self.code_rate = rate
        self.last_rate_change = now
        self._capacity_segments.append((now, self.effective_capacity))
        if self._departure is not None and self._departure.cancelled:
            self._serialize_started = now
            delay = self._serialize_bits_left / self.effective_capacity
            self._departure = self.engine.schedule(delay, self._depart, f"radio:{self.label}:depart")

    def inject_channel_error(self, mean_per: float) -> None:
        if not 0.0 <= mean_per <= 1.0:
            raise ChannelErrorRangeError(f"mean_per must be in [0,1], got {mean_per}")
        self.channel_per = mean_per

    # -- measurement -------------------------------------------------------

    def _prune(self, now: float) -> None:
        horizon = now - KPI_RETENTION
        for log in (self._offered_log, self._delivered_log):
            while log and log[0][0] < horizon:
                log.popleft()
        while self._tx_log and self._tx_log[0][0] < horizon:
            self._tx_log.popleft()

    def capacity_integral(self, t0: float, t1: float) -> float:
        """Bits the link could have carried over [t0, t1] given rate changes."""
        total = 0.0
        segments = self._capacity_segments
        for i, (start, rate) in enumerate(segments):
            end = segments[i + 1][0] if i + 1 < len(segments) else t1
            lo = max(start, t0)
            hi = min(end, t1)
            if hi > lo:
                total += rate * (hi - lo)
        return total

    def sample_kpis(self, window: float) -> RadioKpis:
        if window <= 0:
            raise ValueError(f"window must be positive, got {window}")
        now = self.engine.now
        t0 = now - window
        offered = sum(bits for t, bits in self._offered_log if t > t0)
        delivered = sum(bits for t, bits in self._delivered_log if t > t0)
        transmitted = sum(1 for t, _ in self._tx_log if t > t0)
        lost = sum(1 for t, was_lost in self._tx_log if t > t0 and was_lost)
        cap = self.capacity_integral(t0, now)
        # A packet's bits land at its departure instant, so a window edge can
        # catch up to one packet serialized partly outside it; cap the ratio.
        load = min(1.0, delivered / cap) if cap > 0 else 0.0
        insufficient = transmitted == 0
        residual = 0.0 if insufficient else lost / transmitted
        return RadioKpis(
            window=window,
            load=load,
            offered_bps=offered / window,
            delivered_bps=delivered / window,
            residual_per=residual,
            queue_bytes=self.queue_bytes,
            insufficient=insufficient,
        )

    def conservation_holds(self) -> bool:
        """Exact per-flow packet conservation at the current instant."""
        for counters in list(self.per_flow.values()) + [self.totals]:
            if counters.offered_pkts != (
                counters.delivered_pkts
                + counters.dropped_queue_pkts
                + counters.lost_channel_pkts
                + counters.in_queue_pkts
            ):
                return False
        return True
