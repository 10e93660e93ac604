"""Gateway service: wire protocol, stream fan-out, command acks, snapshots, CLI."""

import filecmp
import json
import os
import socket
import subprocess
import sys
import threading

from edgesim.gateway import FrameReader, GatewayClient, GatewayServer, encode_message
from edgesim.scenario import ScenarioRun, load_scenario, run_scenario


def start_server(mode="manual", pace=0.0, scenario="scenario1"):
    run = ScenarioRun(load_scenario(scenario), mode=mode, pace=pace)
    server = GatewayServer(run)
    host, port = server.serve()
    return server, run, host, port


def test_frame_codec_roundtrip():
    left, right = socket.socketpair()
    payload = {"type": "kpi_batch", "time": 1.0, "samples": [{"metric": "load", "value": 0.5}]}
    left.sendall(encode_message(payload))
    left.sendall(encode_message({"type": "ack", "id": 2, "ok": True}))
    reader = FrameReader(right)
    assert reader.read_message() == payload
    assert reader.read_message() == {"type": "ack", "id": 2, "ok": True}
    left.close()
    right.close()


def test_run_starts_paused_and_snapshot_is_all_zero():
    server, run, host, port = start_server()
    try:
        client = GatewayClient(host, port)
        hello = client.read_message()
        assert hello["type"] == "run_state"
        assert hello["state"] == "paused"
        assert hello["time"] == 0.0
        snap = client.snapshot()
        assert snap["clock"]["time"] == 0.0
        for wf in snap["waveforms"].values():
            assert wf["counters"]["offered_pkts"] == 0
        snap2 = client.snapshot()
        assert snap == snap2  # paused: identical snapshots
        client.close()
    finally:
        server.shutdown()


def test_resume_streams_kpi_batches_and_actions_are_acked():
    # Paced run (~6 s wall for 300 virtual seconds) so the operator can react mid-run.
    server, run, host, port = start_server(pace=50.0)
    try:
        listener = GatewayClient(host, port)
        client = GatewayClient(host, port)
        client.read_message()
        assert client.resume()["ok"]
        batch = client.wait_for(lambda m: m["type"] == "kpi_batch")
        assert batch["time"] >= 1.0
        # wait until video2 exists, then steer it
        client.wait_for(lambda m: m["type"] == "kpi_batch" and m["time"] >= 152)
        ack = client.submit_action({"type": "move_flow", "flow": "video2", "target": "HR"})
        assert ack["ok"], ack
        logged = listener.wait_for(lambda m: m["type"] == "action_logged")
        assert logged["initiator"].startswith("operator:")
        assert logged["action"]["type"] == "move_flow"
        rejected = client.submit_action({"type": "move_flow", "flow": "video2", "target": "HR"})
        assert not rejected["ok"]
        assert "no-op" in rejected["reason"]
        client.close()
        listener.close()
    finally:
        server.shutdown()


def test_two_subscribers_receive_identical_sequences():
    server, run, host, port = start_server()
    try:
        a = GatewayClient(host, port)
        b = GatewayClient(host, port)
        got_a: list[dict] = []
        got_b: list[dict] = []

        def drain(client, sink):
            for message in client.messages():
                sink.append(message)

        ta = threading.Thread(target=drain, args=(a, got_a), daemon=True)
        tb = threading.Thread(target=drain, args=(b, got_b), daemon=True)
        ta.start()
        tb.start()
        control = GatewayClient(host, port)
        control.read_message()
        control.resume()
        server.wait(timeout=60)
        ta.join(timeout=10)
        tb.join(timeout=10)

        def stream_only(messages):
            return [m for m in messages if m["type"] in ("kpi_batch", "sla_report", "action_logged")]

        assert stream_only(got_a) == stream_only(got_b)
        assert len(stream_only(got_a)) > 500
        control.close()
    finally:
        server.shutdown()


def test_stalled_subscriber_does_not_perturb_the_run(tmp_path):
    # Baseline: no subscribers at all.
    baseline = run_scenario(load_scenario("scenario1"), mode="manual")
    base_dir = str(tmp_path / "baseline")
    baseline.export(base_dir)

    server, run, host, port = start_server()
    try:
        stalled = socket.create_connection((host, port))  # never reads: buffer fills
        control = GatewayClient(host, port)
        control.read_message()
        control.resume()
        server.wait(timeout=120)
        live_dir = str(tmp_path / "live")
        run.report().export(live_dir)
        for name in ("loads.csv", "per.csv", "sms_rtt.csv", "sla_fraction.csv", "summary.json"):
            assert filecmp.cmp(os.path.join(base_dir, name), os.path.join(live_dir, name), shallow=False), name
        stalled.close()
        control.close()
    finally:
        server.shutdown()


def test_pause_resume_pace_commands():
    server, run, host, port = start_server(pace=0.0)
    try:
        client = GatewayClient(host, port)
        client.read_message()
        assert client.set_pace(0.0)["ok"]
        assert client.resume()["ok"]
        client.wait_for(lambda m: m["type"] == "kpi_batch" and m["time"] >= 5)
        assert client.pause()["ok"]
        snap = client.snapshot()
        assert snap["clock"]["state"] == "paused"
        assert client.resume()["ok"]
        client.wait_for(lambda m: m["type"] == "run_state" and m["state"] == "finished")
        client.close()
    finally:
        server.shutdown()


def test_snapshot_counters_respect_conservation():
    server, run, host, port = start_server()
    try:
        client = GatewayClient(host, port)
        client.read_message()
        client.resume()
        client.wait_for(lambda m: m["type"] == "kpi_batch" and m["time"] >= 60)
        snap = client.snapshot()
        for label, wf in snap["waveforms"].items():
            c = wf["counters"]
            assert c["offered_pkts"] == (
                c["delivered_pkts"] + c["dropped_queue_pkts"] + c["lost_channel_pkts"] + c["in_queue_pkts"]
            ), label
        client.close()
    finally:
        server.shutdown()


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "edgesim.cli", *args],
            capture_output=True,
            text=True,
            cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
        )

    def test_builtin_scripted_run_exits_zero_with_full_report(self, tmp_path):
        out = str(tmp_path / "rep")
        result = self.run_cli("scenario1", "--out", out)
        assert result.returncode == 0, result.stderr
        assert "final SLA fraction = 1.0" in result.stdout
        names = sorted(os.listdir(out))
        assert names == [
            "actions.json",
            "loads.csv",
            "per.csv",
            "sla_fraction.csv",
            "sms_rtt.csv",
            "summary.json",
        ]

    def test_bad_scenario_path_exits_nonzero_with_diagnostic(self, tmp_path):
        bad = tmp_path / "broken.ini"
        bad.write_text("[scenario]\nname = broken\n")  # missing duration
        result = self.run_cli(str(bad))
        assert result.returncode == 2
        assert "error" in result.stderr.lower()

    def test_same_flags_and_seed_give_identical_report_bytes(self, tmp_path):
        out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
        first = self.run_cli("scenario2", "--seed", "5", "--out", out1)
        second = self.run_cli("scenario2", "--seed", "5", "--out", out2)
        assert first.returncode == 0 and second.returncode == 0
        for name in os.listdir(out1):
            assert filecmp.cmp(os.path.join(out1, name), os.path.join(out2, name), shallow=False), name
