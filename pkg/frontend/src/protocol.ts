/**
 * Gateway wire protocol: length-framed JSON over a byte stream.
 * Frame layout: "<decimal body length>\n<utf-8 json>\n".
 */

export const PROTOCOL_VERSION = 1;

export type RunState = "paused" | "running" | "finished";

export interface RunStateMessage {
  type: "run_state";
  protocol_version: number;
  time: number;
  state: RunState;
  scenario: string;
  mode: string;
  pace: number;
  duration: number;
}

export interface KpiSample {
  source: string;
  subject: string;
  metric: string;
  value: number;
}

export interface KpiBatchMessage {
  type: "kpi_batch";
  time: number;
  samples: KpiSample[];
}

export interface SlaReportMessage {
  type: "sla_report";
  time: number;
  fraction_satisfied: number | null;
  verdicts: Record<string, "satisfied" | "violated" | "grace">;
}

export interface ActionLoggedMessage {
  type: "action_logged";
  time: number;
  action: { type: string; [key: string]: unknown };
  initiator: string;
  outcome: string;
}

export interface AckMessage {
  type: "ack";
  id: number;
  ok: boolean;
  reason?: string;
}

export interface SnapshotMessage {
  type: "snapshot";
  id: number;
  body: SnapshotBody;
}

export interface SnapshotBody {
  protocol_version: number;
  scenario: string;
  mode: string;
  clock: { time: number; pace: number; state: string };
  waveforms: Record<
    string,
    {
      effective_capacity: number;
      raw_capacity: number;
      code_rate: string;
      load: number;
      offered_bps: number;
      residual_per: number | null;
      queue_bytes: number;
    }
  >;
  rules: unknown[];
  apps: Record<string, { kind: string; state: string; port: string }>;
  flows: Record<string, { waveform: string; transcoder: string | null }>;
  sla: { fraction_satisfied: number | null; verdicts: Record<string, string> } | null;
  trace: Record<string, [number, string, number][]>;
}

export type GatewayMessage =
  | RunStateMessage
  | KpiBatchMessage
  | SlaReportMessage
  | ActionLoggedMessage
  | AckMessage
  | SnapshotMessage;

export function encodeFrame(payload: unknown): Buffer {
  const body = Buffer.from(JSON.stringify(payload), "utf-8");
  return Buffer.concat([Buffer.from(`${body.length}\n`, "ascii"), body, Buffer.from("\n")]);
}

/** Incremental decoder; feed arbitrary chunks, collect whole messages. */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): GatewayMessage[] {
    this.buffer = Buffer.concat([this.buffer, chunk]);
    const messages: GatewayMessage[] = [];
    for (;;) {
      const newline = this.buffer.indexOf(0x0a);
      if (newline < 0) break;
      const length = parseInt(this.buffer.subarray(0, newline).toString("ascii"), 10);
      if (Number.isNaN(length)) {
        throw new Error(`malformed frame header: ${this.buffer.subarray(0, newline)}`);
      }
      const end = newline + 1 + length;
      if (this.buffer.length < end + 1) break; // body + trailing newline not arrived yet
      const body = this.buffer.subarray(newline + 1, end).toString("utf-8");
      this.buffer = this.buffer.subarray(end + 1);
      messages.push(JSON.parse(body) as GatewayMessage);
    }
    return messages;
  }
}
