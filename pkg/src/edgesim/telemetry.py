"""Cross-layer monitoring: periodic KPI sampling, sliding-window SLA verdicts,
and chart-series trace export."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

from .apps import SmsClient, VideoServer
from .engine import Engine
from .node import MecNode, UnknownFlowError

DEFAULT_TICK = 1.0
LOAD_WINDOW = 10.0
RTT_WINDOW = 10.0
SUCCESS_WINDOW = 15.0

SATISFIED = "satisfied"
VIOLATED = "violated"
GRACE = "grace"

KNOWN_METRICS = ("rtt_max", "success_rate", "waveform_load")
COMPARATORS = {
    "<=": lambda value, bound: value <= bound,
    ">=": lambda value, bound: value >= bound,
}


class SlaConfigError(ValueError):
    pass


@dataclass(frozen=True)
class KpiSample:
    time: float
    source: str  # radio | switch | app
    subject: str
    metric: str
    value: float


@dataclass(frozen=True)
class SlaPredicate:
    metric: str
    comparator: str
    bound: float
    window: float

    def validate(self) -> None:
        if self.metric not in KNOWN_METRICS:
            raise SlaConfigError(f"unknown metric {self.metric!r}; telemetry produces {KNOWN_METRICS}")
        if self.comparator not in COMPARATORS:
            raise SlaConfigError(f"unknown comparator {self.comparator!r}")
        if self.window <= 0:
            raise SlaConfigError(f"window must be positive, got {self.window}")


@dataclass
class SlaSpec:
    app_id: str
    predicates: list[SlaPredicate]

    def validate(self) -> None:
        if not self.predicates:
            raise SlaConfigError(f"SLA for {self.app_id!r} has no predicates")
        for predicate in self.predicates:
            predicate.validate()


@dataclass
class SlaReport:
    time: float
    verdicts: dict[str, str]  # app id -> satisfied | violated | grace
    fraction_satisfied: float | None
    details: dict[str, dict[str, str]] = field(default_factory=dict)  # app -> metric -> verdict

    @staticmethod
    def fraction_of(verdicts: dict[str, str]) -> float | None:
        satisfied = sum(1 for v in verdicts.values() if v == SATISFIED)
        violated = sum(1 for v in verdicts.values() if v == VIOLATED)
        if satisfied + violated == 0:
            return None
        return satisfied / (satisfied + violated)


class TelemetryPlane:
    """Samples radio CSI, switch counters and app KPIs on a fixed tick and
    evaluates the registered SLA predicates over their trailing windows."""

    def __init__(self, engine: Engine, node: MecNode, tick_period: float = DEFAULT_TICK) -> None:
        self.engine = engine
        self.node = node
        self.tick_period = tick_period
        self.slas: dict[str, SlaSpec] = {}
        self.samples: list[KpiSample] = []
        self.reports: list[SlaReport] = []
        self.tick_count = 0
        # Latest residual PER with sufficient samples, per waveform: (sample time, value).
        self.last_known_per: dict[str, tuple[float, float]] = {}
        # Cumulative per-flow (enqueued, delivered) packet counts summed across waveforms.
        self._flow_history: dict[str, list[tuple[float, int, int]]] = {}
        self.on_batch: list[Callable[[list[KpiSample]], None]] = []
        self.on_report: list[Callable[[SlaReport], None]] = []
        self._started = False

    def register_sla(self, spec: SlaSpec) -> None:
        spec.validate()
        self.slas[spec.app_id] = spec

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self.engine.schedule(self.tick_period, self._tick_event, "telemetry:tick")

    def _tick_event(self) -> None:
        self.tick()
        self.engine.schedule(self.tick_period, self._tick_event, "telemetry:tick")

    # -- sampling ---------------------------------------------------------------

    def tick(self) -> list[KpiSample]:
        now = self.engine.now
        self.tick_count += 1
        batch: list[KpiSample] = []

        for waveform in self.node.all_waveforms():
            kpis = waveform.sample_kpis(LOAD_WINDOW)
            batch.append(KpiSample(now, "radio", waveform.label, "load", kpis.load))
            batch.append(KpiSample(now, "radio", waveform.label, "offered_bps", kpis.offered_bps))
            batch.append(KpiSample(now, "radio", waveform.label, "delivered_bps", kpis.delivered_bps))
            batch.append(KpiSample(now, "radio", waveform.label, "queue_bytes", float(kpis.queue_bytes)))
            if not kpis.insufficient:
                batch.append(KpiSample(now, "radio", waveform.label, "residual_per", kpis.residual_per))
                self.last_known_per[waveform.label] = (now, kpis.residual_per)

        switch = self.node.switch
        batch.append(KpiSample(now, "switch", switch.name, "default_drops", float(switch.default_drops)))
        batch.append(KpiSample(now, "switch", switch.name, "loop_drops", float(switch.loop_drops)))

        for app_id, instance in self.node.apps.instances.items():
            if isinstance(instance, SmsClient):
                rtt_max = instance.window_rtt_max(RTT_WINDOW)
                if rtt_max is not None:
                    batch.append(KpiSample(now, "app", app_id, "rtt_max", rtt_max))
                success = instance.window_success_rate(SUCCESS_WINDOW)
                if success is not None:
                    batch.append(KpiSample(now, "app", app_id, "success_rate", success))
            elif isinstance(instance, VideoServer):
                batch.append(KpiSample(now, "app", app_id, "emitted_bits", float(instance.emitted_bits)))
                batch.append(KpiSample(now, "app", app_id, "received_bits", float(instance.received_bits)))

        self._record_flow_history(now)
        self.samples.extend(batch)
        for hook in self.on_batch:
            hook(batch)
        report = self.evaluate_slas(now)
        for hook in self.on_report:
            hook(report)
        return batch

    def _record_flow_history(self, now: float) -> None:
        for flow_id in self.node.flows:
            enqueued = 0
            delivered = 0
            for waveform in self.node.all_waveforms():
                counters = waveform.per_flow.get(flow_id)
                if counters is not None:
                    enqueued += counters.offered_pkts
                    delivered += counters.delivered_pkts
            self._flow_history.setdefault(flow_id, []).append((now, enqueued, delivered))

    def per_view(self, label: str, last_rate_change: float) -> float:
        """Residual PER the controller may trust: the last sufficient measurement
        whose window lies entirely after the waveform's last code-rate change.
        Stale pre-change losses would otherwise masquerade as channel state."""
        entry = self.last_known_per.get(label)
        if entry is None:
            return 0.0
        sampled_at, value = entry
        if sampled_at - LOAD_WINDOW < last_rate_change:
            return 0.0
        return value

    def flow_success_rate(self, flow_id: str, window: float) -> float | None:
        """Delivered/enqueued packets of the flow at the radio layer over the
        trailing window, on whichever waveforms carried it."""
        history = self._flow_history.get(flow_id)
        if not history:
            return None
        t_now, enq_now, del_now = history[-1]
        t0 = t_now - window
        enq_base = 0
        del_base = 0
        for t, enq, dlv in reversed(history):
            if t <= t0:
                enq_base, del_base = enq, dlv
                break
        emitted = enq_now - enq_base
        if emitted == 0:
            return None
        return (del_now - del_base) / emitted

    # -- SLA evaluation ------------------------------------------------------------

    def _evaluate_predicate(self, app_id: str, predicate: SlaPredicate) -> str:
        instance = self.node.apps.instances.get(app_id)
        if instance is None:
            return GRACE
        value: float | None = None
        if predicate.metric == "rtt_max":
            if isinstance(instance, SmsClient):
                value = instance.window_rtt_max(predicate.window)
        elif predicate.metric == "success_rate":
            if isinstance(instance, SmsClient):
                value = instance.window_success_rate(predicate.window)
            elif isinstance(instance, VideoServer):
                value = self.flow_success_rate(instance.flow_id, predicate.window)
        elif predicate.metric == "waveform_load":
            flow_id = getattr(instance, "flow_id", None)
            if flow_id is not None:
                try:
                    label = self.node.flow_waveform(flow_id)
                except UnknownFlowError:
                    return GRACE
                value = self.node.waveform(label).sample_kpis(predicate.window).load
        if value is None:
            return GRACE
        ok = COMPARATORS[predicate.comparator](value, predicate.bound)
        return SATISFIED if ok else VIOLATED

    def evaluate_slas(self, time: float | None = None) -> SlaReport:
        now = self.engine.now if time is None else time
        verdicts: dict[str, str] = {}
        details: dict[str, dict[str, str]] = {}
        for app_id, spec in self.slas.items():
            per_metric: dict[str, str] = {}
            for predicate in spec.predicates:
                per_metric[predicate.metric] = self._evaluate_predicate(app_id, predicate)
            details[app_id] = per_metric
            predicate_verdicts = list(per_metric.values())
            if VIOLATED in predicate_verdicts:
                verdicts[app_id] = VIOLATED
            elif all(v == GRACE for v in predicate_verdicts):
                verdicts[app_id] = GRACE
            else:
                verdicts[app_id] = SATISFIED
        report = SlaReport(now, verdicts, SlaReport.fraction_of(verdicts), details)
        self.reports.append(report)
        return report

    # -- trace export ------------------------------------------------------------

    def trace_rows(self) -> dict[str, list[tuple[float, str, float]]]:
        """Chart series: per-waveform load, per-waveform PER, SMS RTT, SLA fraction."""
        loads: list[tuple[float, str, float]] = []
        per: list[tuple[float, str, float]] = []
        rtt: list[tuple[float, str, float]] = []
        sla: list[tuple[float, str, float]] = []
        for sample in self.samples:
            if sample.source == "radio" and sample.metric == "load":
                loads.append((sample.time, sample.subject, sample.value))
            elif sample.source == "radio" and sample.metric == "offered_bps":
                loads.append((sample.time, f"{sample.subject}-offered-bps", sample.value))
            elif sample.source == "radio" and sample.metric == "residual_per":
                per.append((sample.time, sample.subject, sample.value))
            elif sample.source == "app" and sample.metric == "rtt_max":
                rtt.append((sample.time, sample.subject, sample.value))
        for report in self.reports:
            if report.fraction_satisfied is not None:
                sla.append((report.time, "fraction", report.fraction_satisfied))
        return {"loads": loads, "per": per, "sms_rtt": rtt, "sla_fraction": sla}

    def export_trace(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for name, rows in self.trace_rows().items():
            path = os.path.join(directory, f"{name}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("time,series,value\n")
                for t, series, value in rows:
                    fh.write(f"{t!r},{series},{value!r}\n")
            paths.append(path)
        return paths
