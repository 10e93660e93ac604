import { describe, expect, it } from "vitest";

import { PROTOCOL_VERSION, SnapshotBody } from "../src/protocol";
import { ConsoleSession } from "../src/session";

function runState(overrides: Partial<Record<string, unknown>> = {}) {
  return {
    type: "run_state" as const,
    protocol_version: PROTOCOL_VERSION,
    time: 0,
    state: "paused" as const,
    scenario: "scenario-1",
    mode: "manual",
    pace: 10,
    duration: 300,
    ...overrides,
  };
}

describe("console session", () => {
  it("stores chart series verbatim from kpi batches", () => {
    const session = new ConsoleSession();
    session.ingest(runState());
    session.ingest({
      type: "kpi_batch",
      time: 5,
      samples: [
        { source: "radio", subject: "HR", metric: "load", value: 0.9123 },
        { source: "radio", subject: "HR", metric: "offered_bps", value: 912_000 },
        { source: "app", subject: "sms", metric: "rtt_max", value: 0.0148 },
      ],
    });
    expect(session.series.get("load:HR")).toEqual([{ t: 5, v: 0.9123 }]);
    expect(session.series.get("rtt_max:sms")).toEqual([{ t: 5, v: 0.0148 }]);
    expect(session.series.has("offered_bps:HR")).toBe(false); // not a chart panel
  });

  it("records annotations only for applied actions", () => {
    const session = new ConsoleSession();
    session.ingest({
      type: "action_logged",
      time: 170,
      action: { type: "move_flow", flow: "video2", target: "HR" },
      initiator: "operator:console",
      outcome: "ok",
    });
    session.ingest({
      type: "action_logged",
      time: 171,
      action: { type: "move_flow", flow: "video2", target: "HR" },
      initiator: "operator:console",
      outcome: "rejected: no-op",
    });
    expect(session.annotations).toHaveLength(1);
    expect(session.annotations[0]).toMatchObject({ time: 170, label: "move_flow" });
    expect(session.log).toHaveLength(2);
  });

  it("bounds chart history to the scenario duration", () => {
    const session = new ConsoleSession();
    session.ingest(runState({ duration: 100 }));
    for (let t = 1; t <= 500; t++) {
      session.ingest({
        type: "kpi_batch",
        time: t,
        samples: [{ source: "radio", subject: "HR", metric: "load", value: t / 500 }],
      });
    }
    const points = session.series.get("load:HR")!;
    expect(points.length).toBeLessThanOrEqual(108);
    expect(points[points.length - 1].t).toBe(500);
  });

  it("flags a protocol version mismatch", () => {
    const session = new ConsoleSession();
    session.ingest(runState({ protocol_version: PROTOCOL_VERSION + 1 }));
    expect(session.incompatible).toBe(true);
  });

  it("tracks sla lights and fraction series", () => {
    const session = new ConsoleSession();
    session.ingest({
      type: "sla_report",
      time: 50,
      fraction_satisfied: 0.5,
      verdicts: { sms: "violated", video1: "satisfied" },
    });
    expect(session.lights).toEqual({ sms: "violated", video1: "satisfied" });
    expect(session.series.get("sla_fraction")).toEqual([{ t: 50, v: 0.5 }]);
  });

  it("backfills charts and entities from a snapshot", () => {
    const session = new ConsoleSession();
    const body: SnapshotBody = {
      protocol_version: PROTOCOL_VERSION,
      scenario: "scenario-1",
      mode: "manual",
      clock: { time: 42, pace: 10, state: "running" },
      waveforms: {
        HR: {
          effective_capacity: 1_000_000,
          raw_capacity: 1_000_000,
          code_rate: "1",
          load: 0.9,
          offered_bps: 900_000,
          residual_per: 0,
          queue_bytes: 0,
        },
      },
      rules: [],
      apps: { video1: { kind: "video_server", state: "running", port: "video1" } },
      flows: { video1: { waveform: "HR", transcoder: null } },
      sla: { fraction_satisfied: 1.0, verdicts: { video1: "satisfied" } },
      trace: {
        loads: [
          [1, "HR", 0.1],
          [2, "HR", 0.2],
          [2, "HR-offered-bps", 100000],
        ],
        per: [],
        sms_rtt: [[2, "sms", 0.0148]],
        sla_fraction: [[2, "fraction", 1.0]],
      },
    };
    session.applySnapshot(body);
    expect(session.series.get("load:HR")).toEqual([
      { t: 1, v: 0.1 },
      { t: 2, v: 0.2 },
    ]);
    expect(session.series.get("rtt_max:sms")).toEqual([{ t: 2, v: 0.0148 }]);
    expect(session.series.get("sla_fraction")).toEqual([{ t: 2, v: 1.0 }]);
    expect(session.view().entities.apps.video1.kind).toBe("video_server");
    expect(session.flows.video1.waveform).toBe("HR");
    expect(session.waveforms.HR.effective_capacity).toBe(1_000_000);
  });

  it("view() exposes only received data", () => {
    const session = new ConsoleSession();
    session.ingest(runState());
    const view = session.view();
    expect(view.runState).toBe("paused");
    expect(view.series).toEqual({});
    expect(view.annotations).toEqual([]);
  });
});
