import { describe, expect, it } from "vitest";

import { FrameDecoder, encodeFrame } from "../src/protocol";

describe("frame codec", () => {
  it("round-trips a message", () => {
    const decoder = new FrameDecoder();
    const payload = { type: "ack", id: 3, ok: true };
    const messages = decoder.push(encodeFrame(payload));
    expect(messages).toEqual([payload]);
  });

  it("handles several frames in one chunk", () => {
    const decoder = new FrameDecoder();
    const chunk = Buffer.concat([
      encodeFrame({ type: "ack", id: 1, ok: true }),
      encodeFrame({ type: "ack", id: 2, ok: false, reason: "no" }),
    ]);
    const messages = decoder.push(chunk);
    expect(messages.map((m) => (m as { id: number }).id)).toEqual([1, 2]);
  });

  it("reassembles frames split at arbitrary byte boundaries", () => {
    const decoder = new FrameDecoder();
    const frame = encodeFrame({
      type: "kpi_batch",
      time: 12.0,
      samples: [{ source: "radio", subject: "HR", metric: "load", value: 0.93 }],
    });
    const received: unknown[] = [];
    for (let i = 0; i < frame.length; i += 3) {
      received.push(...decoder.push(frame.subarray(i, Math.min(i + 3, frame.length))));
    }
    expect(received).toHaveLength(1);
    expect((received[0] as { time: number }).time).toBe(12.0);
  });

  it("preserves utf-8 payload lengths", () => {
    const decoder = new FrameDecoder();
    const payload = { type: "ack", id: 9, ok: false, reason: "flux élevé — rejeté" };
    expect(decoder.push(encodeFrame(payload))).toEqual([payload]);
  });

  it("rejects a malformed header", () => {
    const decoder = new FrameDecoder();
    expect(() => decoder.push(Buffer.from("not-a-length\n{}"))).toThrow(/malformed/);
  });
});
