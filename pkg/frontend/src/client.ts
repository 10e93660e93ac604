/** TCP client for the gateway: telemetry stream in, ack-correlated commands out. */

import { EventEmitter } from "node:events";
import * as net from "node:net";

import { AckMessage, FrameDecoder, GatewayMessage, SnapshotBody, SnapshotMessage, encodeFrame } from "./protocol";

interface Pending {
  resolve: (message: AckMessage | SnapshotMessage) => void;
  reject: (err: Error) => void;
}

export class GatewayClient extends EventEmitter {
  private socket: net.Socket | null = null;
  private decoder = new FrameDecoder();
  private nextId = 1;
  private pending = new Map<number, Pending>();
  closed = false;

  connect(host: string, port: number, timeoutMs = 5000): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port });
      const timer = setTimeout(() => {
        socket.destroy();
        reject(new Error(`gateway ${host}:${port} unreachable`));
      }, timeoutMs);
      socket.once("connect", () => {
        clearTimeout(timer);
        this.socket = socket;
        resolve();
      });
      socket.once("error", (err) => {
        clearTimeout(timer);
        reject(err);
      });
      socket.on("data", (chunk) => {
        let messages: GatewayMessage[];
        try {
          messages = this.decoder.push(chunk);
        } catch (err) {
          this.emit("error", err);
          socket.destroy();
          return;
        }
        for (const message of messages) {
          this.dispatch(message);
        }
      });
      socket.on("close", () => {
        this.closed = true;
        for (const pending of this.pending.values()) {
          pending.reject(new Error("gateway connection closed"));
        }
        this.pending.clear();
        this.emit("close");
      });
    });
  }

  private dispatch(message: GatewayMessage): void {
    if ((message.type === "ack" || message.type === "snapshot") && "id" in message) {
      const pending = this.pending.get(message.id as number);
      if (pending) {
        this.pending.delete(message.id as number);
        pending.resolve(message);
        return;
      }
    }
    this.emit("message", message);
  }

  command(payload: Record<string, unknown>): Promise<AckMessage | SnapshotMessage> {
    if (!this.socket || this.closed) {
      return Promise.reject(new Error("not connected"));
    }
    const id = this.nextId++;
    const frame = encodeFrame({ ...payload, id });
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.socket!.write(frame);
    });
  }

  resume(): Promise<AckMessage | SnapshotMessage> {
    return this.command({ type: "resume" });
  }

  pause(): Promise<AckMessage | SnapshotMessage> {
    return this.command({ type: "pause" });
  }

  setPace(pace: number): Promise<AckMessage | SnapshotMessage> {
    return this.command({ type: "set_pace", pace });
  }

  submitAction(action: Record<string, unknown>, operator = "console"): Promise<AckMessage> {
    return this.command({ type: "submit_action", action, operator }) as Promise<AckMessage>;
  }

  async snapshot(): Promise<SnapshotBody> {
    const reply = (await this.command({ type: "snapshot_request" })) as SnapshotMessage;
    return reply.body;
  }

  close(): void {
    this.closed = true;
    this.socket?.destroy();
  }
}
