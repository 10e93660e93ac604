"""External surface: a control/telemetry TCP service streaming live KPIs and
accepting operator commands, plus the client used by tests and scripts.

Wire format (PROTOCOL.md): each message is UTF-8 JSON, framed by an ASCII
decimal byte-length line. Telemetry flows server->client; commands flow
client->server and each receives exactly one ack.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
from typing import Callable, Iterator

from .controller import ActionRecord, ActionRejected, action_from_dict, action_to_dict
from .scenario import ScenarioRun
from .telemetry import KpiSample, SlaReport

PROTOCOL_VERSION = 1

# A subscriber this far behind gets disconnected rather than slowing the run.
SUBSCRIBER_BUFFER = 4096

PAUSED = "paused"
RUNNING = "running"
FINISHED = "finished"


def encode_message(payload: dict) -> bytes:
    body = json.dumps(payload, sort_keys=True).encode("utf-8")
    return f"{len(body)}\n".encode("ascii") + body + b"\n"


class FrameReader:
    """Incremental decoder for length-framed JSON messages."""

    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock
        self._buffer = b""

    def _read_until(self, marker: bytes) -> bytes | None:
        while marker not in self._buffer:
            chunk = self._sock.recv(65536)
            if not chunk:
                return None
            self._buffer += chunk
        index = self._buffer.index(marker)
        line, self._buffer = self._buffer[:index], self._buffer[index + 1 :]
        return line

    def read_message(self) -> dict | None:
        header = self._read_until(b"\n")
        if header is None:
            return None
        length = int(header)
        while len(self._buffer) < length + 1:
            chunk = self._sock.recv(65536)
            if not chunk:
                return None
            self._buffer += chunk
        body, self._buffer = self._buffer[:length], self._buffer[length + 1 :]
        return json.loads(body.decode("utf-8"))


class _Subscriber:
    """One connected client: bounded outbound queue drained by a writer thread."""

    def __init__(self, sock: socket.socket, address) -> None:
        self.sock = sock
        self.address = address
        self.outbox: "queue.Queue[bytes | None]" = queue.Queue(maxsize=SUBSCRIBER_BUFFER)
        self.alive = True

    def offer(self, frame: bytes) -> None:
        if not self.alive:
            return
        try:
            self.outbox.put_nowait(frame)
        except queue.Full:
            # Slow consumer: drop it, never the simulation's pace.
            self.alive = False
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def writer_loop(self) -> None:
        while True:
            frame = self.outbox.get()
            if frame is None or not self.alive:
                break
            try:
                self.sock.sendall(frame)
            except OSError:
                self.alive = False
                break
        self.alive = False
        # shutdown (not just close) so the peer sees FIN even while our own
        # reader thread is still blocked in recv on this socket.
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class GatewayServer:
    """Hosts one scenario run: subscribers get the telemetry stream, commands
    are funneled through the engine's queue and acknowledged individually."""

    def __init__(self, run: ScenarioRun, host: str = "127.0.0.1", port: int = 0) -> None:
        self.run = run
        self.host = host
        self.port = port
        self._subscribers: list[_Subscriber] = []
        self._subscribers_lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._engine_thread: threading.Thread | None = None
        self._accept_thread: threading.Thread | None = None
        self.state = PAUSED
        run.telemetry.on_batch.append(self._publish_batch)
        run.telemetry.on_report.append(self._publish_report)
        run.controller.on_action.append(self._publish_action)

    # -- lifecycle -------------------------------------------------------------

    def serve(self) -> tuple[str, int]:
        """Bind, start the paused run, and accept subscribers. Returns the
        bound address."""
        listener = socket.create_server((self.host, self.port))
        self._listener = listener
        self.host, self.port = listener.getsockname()[:2]
        self.run.engine.pause()
        self.run.telemetry.start()
        self._engine_thread = threading.Thread(target=self._run_engine, name="edgesim-engine", daemon=True)
        self._engine_thread.start()
        self._accept_thread = threading.Thread(target=self._accept_loop, name="edgesim-accept", daemon=True)
        self._accept_thread.start()
        return self.host, self.port

    def _run_engine(self) -> None:
        try:
            self.run.engine.run_until(self.run.script.duration)
        finally:
            self.run.finished = True
            self.state = FINISHED
            self.run.engine.drain_commands()  # late commands raced the finish line
            self._broadcast(self._run_state_message())
            self._close_all()

    def wait(self, timeout: float | None = None) -> None:
        if self._engine_thread is not None:
            self._engine_thread.join(timeout)

    def shutdown(self) -> None:
        self.run.engine.stop_requested = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        self.wait(timeout=5.0)
        self._close_all()

    def _close_all(self) -> None:
        with self._subscribers_lock:
            subscribers = list(self._subscribers)
        for sub in subscribers:
            if sub.alive:
                try:
                    sub.outbox.put_nowait(None)
                except queue.Full:
                    sub.alive = False

    # -- subscriber handling ------------------------------------------------------

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while True:
            try:
                sock, address = self._listener.accept()
            except OSError:
                return
            sub = _Subscriber(sock, address)
            with self._subscribers_lock:
                self._subscribers.append(sub)
            threading.Thread(target=sub.writer_loop, daemon=True).start()
            threading.Thread(target=self._reader_loop, args=(sub,), daemon=True).start()
            sub.offer(encode_message(self._run_state_message()))

    def _reader_loop(self, sub: _Subscriber) -> None:
        reader = FrameReader(sub.sock)
        while sub.alive:
            try:
                message = reader.read_message()
            except (OSError, ValueError):
                break
            if message is None:
                break
            self._handle_command(sub, message)

    # -- publishing ----------------------------------------------------------------

    def _broadcast(self, payload: dict) -> None:
        frame = encode_message(payload)
        with self._subscribers_lock:
            subscribers = list(self._subscribers)
        for sub in subscribers:
            sub.offer(frame)

    def _run_state_message(self) -> dict:
        engine = self.run.engine
        return {
            "type": "run_state",
            "protocol_version": PROTOCOL_VERSION,
            "time": engine.now,
            "state": self.state,
            "scenario": self.run.script.name,
            "mode": self.run.mode,
            "pace": engine.clock.pace,
            "duration": self.run.script.duration,
        }

    def _publish_batch(self, batch: list[KpiSample]) -> None:
        if not batch:
            return
        self._broadcast(
            {
                "type": "kpi_batch",
                "time": batch[0].time,
                "samples": [
                    {"source": s.source, "subject": s.subject, "metric": s.metric, "value": s.value}
                    for s in batch
                ],
            }
        )

    def _publish_report(self, report: SlaReport) -> None:
        self._broadcast(
            {
                "type": "sla_report",
                "time": report.time,
                "fraction_satisfied": report.fraction_satisfied,
                "verdicts": report.verdicts,
            }
        )

    def _publish_action(self, record: ActionRecord) -> None:
        self._broadcast(
            {
                "type": "action_logged",
                "time": record.time,
                "action": action_to_dict(record.action),
                "initiator": record.initiator,
                "outcome": record.outcome,
            }
        )

    # -- commands -------------------------------------------------------------------

    def _submit(self, fn: Callable[[], object], on_done: Callable[[object], None]) -> None:
        """Route through the engine's command queue; once the run has finished
        the engine thread is gone and state is static, so execute inline."""
        if self.state == FINISHED:
            on_done(fn())
        else:
            self.run.engine.submit_command(fn, on_done)

    def _handle_command(self, sub: _Subscriber, message: dict) -> None:
        command_id = message.get("id")
        kind = message.get("type")

        def ack(ok: bool, reason: str | None = None, extra: dict | None = None) -> None:
            payload = {"type": "ack", "id": command_id, "ok": ok}
            if reason is not None:
                payload["reason"] = reason
            if extra:
                payload.update(extra)
            sub.offer(encode_message(payload))

        engine = self.run.engine
        if kind == "submit_action":
            try:
                action = action_from_dict(message.get("action") or {})
            except (KeyError, ValueError, TypeError) as exc:
                ack(False, f"malformed action: {exc}")
                return
            operator = message.get("operator", "console")

            def do_submit():
                try:
                    self.run.controller.submit_manual(action, operator)
                    return True, None
                except ActionRejected as exc:
                    return False, exc.reason

            self._submit(do_submit, lambda result: ack(result[0], result[1]))
        elif kind == "pause":
            self._submit(lambda: self._set_state(PAUSED), lambda _: ack(True))
        elif kind == "resume":
            self._submit(lambda: self._set_state(RUNNING), lambda _: ack(True))
        elif kind == "set_pace":
            pace = message.get("pace")
            if not isinstance(pace, (int, float)) or pace < 0:
                ack(False, f"invalid pace {pace!r}")
                return
            self._submit(lambda: engine.set_pace(float(pace)), lambda _: ack(True))
        elif kind == "snapshot_request":
            self._submit(self.snapshot_document, lambda doc: sub.offer(
                encode_message({"type": "snapshot", "id": command_id, "body": doc})
            ))
        else:
            ack(False, f"unknown command type {kind!r}")

    def _set_state(self, state: str) -> None:
        if self.state == FINISHED:
            return
        self.state = state
        engine = self.run.engine
        if state == PAUSED:
            engine.pause()
        else:
            engine.resume()
        self._broadcast(self._run_state_message())

    # -- snapshot ---------------------------------------------------------------------

    def snapshot_document(self) -> dict:
        """Full consistent state document, captured at an event boundary."""
        run = self.run
        latest = run.telemetry.reports[-1] if run.telemetry.reports else None
        waveforms = {}
        for waveform in run.node.all_waveforms():
            kpis = waveform.sample_kpis(10.0)
            waveforms[waveform.label] = {
                "raw_capacity": waveform.raw_capacity,
                "code_rate": str(waveform.code_rate),
                "effective_capacity": waveform.effective_capacity,
                "channel_per": waveform.channel_per,
                "load": kpis.load,
                "offered_bps": kpis.offered_bps,
                "residual_per": None if kpis.insufficient else kpis.residual_per,
                "queue_bytes": waveform.queue_bytes,
                "counters": {
                    "offered_pkts": waveform.totals.offered_pkts,
                    "delivered_pkts": waveform.totals.delivered_pkts,
                    "dropped_queue_pkts": waveform.totals.dropped_queue_pkts,
                    "lost_channel_pkts": waveform.totals.lost_channel_pkts,
                    "in_queue_pkts": waveform.totals.in_queue_pkts,
                },
            }
        apps = {}
        for app_id, instance in run.node.apps.instances.items():
            apps[app_id] = {
                "kind": instance.spec.kind,
                "state": instance.state,
                "port": instance.port,
                "kpis": instance.kpi_snapshot(),
            }
        flows = {
            flow_id: {"waveform": steering.pair, "transcoder": steering.transcoder_id}
            for flow_id, steering in run.node.flows.items()
        }
        return {
            "protocol_version": PROTOCOL_VERSION,
            "scenario": run.script.name,
            "mode": run.mode,
            "clock": {"time": run.engine.now, "pace": run.engine.clock.pace, "state": self.state},
            "waveforms": waveforms,
            "rules": run.node.switch.table_dump(),
            "apps": apps,
            "flows": flows,
            "sla": None
            if latest is None
            else {"fraction_satisfied": latest.fraction_satisfied, "verdicts": latest.verdicts},
            "trace": run.telemetry.trace_rows(),
        }


class GatewayClient:
    """Blocking client for the gateway protocol."""

    def __init__(self, host: str, port: int, timeout: float | None = 30.0) -> None:
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.reader = FrameReader(self.sock)
        self._next_id = 0

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def messages(self) -> Iterator[dict]:
        while True:
            message = self.reader.read_message()
            if message is None:
                return
            yield message

    def read_message(self) -> dict | None:
        return self.reader.read_message()

    def send(self, payload: dict) -> int:
        self._next_id += 1
        payload = dict(payload)
        payload["id"] = self._next_id
        self.sock.sendall(encode_message(payload))
        return self._next_id

    def wait_for(self, predicate: Callable[[dict], bool]) -> dict:
        for message in self.messages():
            if predicate(message):
                return message
        raise ConnectionError("stream ended before expected message")

    def command(self, payload: dict) -> dict:
        """Send one command and block until its ack (or snapshot) arrives;
        intervening telemetry is discarded."""
        command_id = self.send(payload)
        return self.wait_for(
            lambda m: m.get("id") == command_id and m.get("type") in ("ack", "snapshot")
        )

    def resume(self) -> dict:
        return self.command({"type": "resume"})

    def pause(self) -> dict:
        return self.command({"type": "pause"})

    def set_pace(self, pace: float) -> dict:
        return self.command({"type": "set_pace", "pace": pace})

    def submit_action(self, action: dict, operator: str = "client") -> dict:
        return self.command({"type": "submit_action", "action": action, "operator": operator})

    def snapshot(self) -> dict:
        reply = self.command({"type": "snapshot_request"})
        return reply["body"]
