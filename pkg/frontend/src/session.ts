/**
 * Console session state: ring buffers of telemetry series, chart annotations,
 * SLA lights, and the event log.
 *
 * Every datum here is a verbatim value from a received gateway message; the
 * console never computes KPIs of its own.
 */

import {
  ActionLoggedMessage,
  GatewayMessage,
  PROTOCOL_VERSION,
  RunState,
  SnapshotBody,
} from "./protocol";

export interface Point {
  t: number;
  v: number;
}

export interface Annotation {
  time: number;
  label: string;
  initiator: string;
}

export interface LogEntry {
  time: number;
  text: string;
  outcome: string;
}

const STALE_AFTER_MS = 5000;

/** Series kept for the four chart panels. */
const CHART_METRICS = new Set(["load", "residual_per", "rtt_max"]);

export class ConsoleSession {
  series = new Map<string, Point[]>();
  annotations: Annotation[] = [];
  log: LogEntry[] = [];
  lights: Record<string, string> = {};
  waveforms: Record<string, { effective_capacity: number; code_rate: string }> = {};
  flows: Record<string, { waveform: string; transcoder: string | null }> = {};
  apps: Record<string, { kind: string; state: string }> = {};
  runState: RunState | "disconnected" = "disconnected";
  scenario = "";
  mode = "";
  pace = 0;
  duration = 0;
  clockTime = 0;
  incompatible = false;
  private lastMessageWall = 0;
  private maxPoints: number;

  constructor(maxPoints = 4096) {
    this.maxPoints = maxPoints;
  }

  /** History is bounded to the scenario duration (one point per tick). */
  private capacityFor(duration: number, tick = 1.0): number {
    return Math.max(64, Math.ceil(duration / tick) + 8);
  }

  private pushPoint(key: string, t: number, v: number): void {
    let points = this.series.get(key);
    if (!points) {
      points = [];
      this.series.set(key, points);
    }
    points.push({ t, v });
    const cap = Math.min(this.maxPoints, this.duration > 0 ? this.capacityFor(this.duration) : this.maxPoints);
    if (points.length > cap) {
      points.splice(0, points.length - cap);
    }
  }

  ingest(message: GatewayMessage): void {
    this.lastMessageWall = Date.now();
    switch (message.type) {
      case "run_state": {
        if (message.protocol_version !== PROTOCOL_VERSION) {
          this.incompatible = true;
        }
        this.runState = message.state;
        this.scenario = message.scenario;
        this.mode = message.mode;
        this.pace = message.pace;
        this.duration = message.duration;
        this.clockTime = message.time;
        break;
      }
      case "kpi_batch": {
        this.clockTime = message.time;
        for (const sample of message.samples) {
          if (CHART_METRICS.has(sample.metric)) {
            this.pushPoint(`${sample.metric}:${sample.subject}`, message.time, sample.value);
          }
        }
        break;
      }
      case "sla_report": {
        this.clockTime = message.time;
        if (message.fraction_satisfied !== null) {
          this.pushPoint("sla_fraction", message.time, message.fraction_satisfied);
        }
        this.lights = { ...message.verdicts };
        break;
      }
      case "action_logged": {
        this.recordAction(message);
        break;
      }
      default:
        break;
    }
  }

  private recordAction(message: ActionLoggedMessage): void {
    const label = message.action.type;
    this.log.push({
      time: message.time,
      text: `${label} (${message.initiator})`,
      outcome: message.outcome,
    });
    if (message.outcome === "ok") {
      this.annotations.push({ time: message.time, label, initiator: message.initiator });
    }
  }

  /** Backfill charts and entity lists from a snapshot (connect or reconnect). */
  applySnapshot(body: SnapshotBody): void {
    this.lastMessageWall = Date.now();
    if (body.protocol_version !== PROTOCOL_VERSION) {
      this.incompatible = true;
    }
    this.scenario = body.scenario;
    this.mode = body.mode;
    this.clockTime = body.clock.time;
    this.pace = body.clock.pace;
    this.waveforms = {};
    for (const [label, wf] of Object.entries(body.waveforms)) {
      this.waveforms[label] = { effective_capacity: wf.effective_capacity, code_rate: wf.code_rate };
    }
    this.flows = { ...body.flows };
    this.apps = {};
    for (const [id, app] of Object.entries(body.apps)) {
      this.apps[id] = { kind: app.kind, state: app.state };
    }
    if (body.sla) {
      this.lights = { ...body.sla.verdicts };
    }
    const mapping: Record<string, (series: string) => string | null> = {
      loads: (series) => (series.endsWith("-offered-bps") ? null : `load:${series}`),
      per: (series) => `residual_per:${series}`,
      sms_rtt: (series) => `rtt_max:${series}`,
      sla_fraction: () => "sla_fraction",
    };
    for (const [file, rows] of Object.entries(body.trace ?? {})) {
      const toKey = mapping[file];
      if (!toKey) continue;
      const rebuilt = new Map<string, Point[]>();
      for (const [t, series, value] of rows) {
        const key = toKey(series);
        if (key === null) continue;
        let points = rebuilt.get(key);
        if (!points) {
          points = [];
          rebuilt.set(key, points);
        }
        points.push({ t, v: value });
      }
      for (const [key, points] of rebuilt) {
        this.series.set(key, points);
      }
    }
  }

  get stale(): boolean {
    return (
      this.runState !== "finished" &&
      this.lastMessageWall > 0 &&
      Date.now() - this.lastMessageWall > STALE_AFTER_MS
    );
  }

  /** Plain-JSON view for the SSE stream / HTTP polling endpoint. */
  view() {
    const series: Record<string, Point[]> = {};
    for (const [key, points] of this.series) {
      series[key] = points;
    }
    return {
      runState: this.runState,
      scenario: this.scenario,
      mode: this.mode,
      pace: this.pace,
      duration: this.duration,
      clockTime: this.clockTime,
      incompatible: this.incompatible,
      stale: this.stale,
      series,
      annotations: this.annotations,
      log: this.log.slice(-200),
      lights: this.lights,
      entities: {
        waveforms: this.waveforms,
        flows: this.flows,
        apps: this.apps,
      },
    };
  }
}
