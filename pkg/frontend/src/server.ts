/**
 * Console HTTP server: serves the dashboard page, streams session state over
 * SSE, and relays action/pause/resume/pace commands to the gateway. The
 * browser UI posts to the same /api/command endpoint the tests use.
 */

import * as http from "node:http";
import * as path from "node:path";

import express from "express";

import { GatewayClient } from "./client";
import { AckMessage } from "./protocol";
import { ConsoleSession } from "./session";

export interface ConsoleOptions {
  gatewayHost: string;
  gatewayPort: number;
  httpPort: number;
}

export interface RunningConsole {
  session: ConsoleSession;
  client: GatewayClient;
  httpServer: http.Server;
  httpPort: number;
  close: () => Promise<void>;
}

export async function startConsole(options: ConsoleOptions): Promise<RunningConsole> {
  const session = new ConsoleSession();
  const client = new GatewayClient();
  client.on("message", (message) => session.ingest(message));
  client.on("close", () => {
    if (session.runState !== "finished") {
      session.runState = "disconnected";
    }
  });
  await client.connect(options.gatewayHost, options.gatewayPort);
  // Backfill charts and entity lists before going live.
  session.applySnapshot(await client.snapshot());

  const app = express();
  app.use(express.json());
  app.use(express.static(path.join(__dirname, "..", "public")));

  app.get("/api/session", (_req, res) => {
    res.json(session.view());
  });

  app.post("/api/command", async (req, res) => {
    const { type } = req.body ?? {};
    try {
      let reply: AckMessage;
      if (type === "submit_action") {
        reply = await client.submitAction(req.body.action ?? {}, req.body.operator ?? "console");
      } else if (type === "resume" || type === "pause") {
        reply = (await client.command({ type })) as AckMessage;
      } else if (type === "set_pace") {
        reply = (await client.setPace(Number(req.body.pace))) as AckMessage;
      } else {
        res.status(400).json({ ok: false, reason: `unknown command ${type}` });
        return;
      }
      res.json({ ok: reply.ok, reason: reply.reason ?? null });
    } catch (err) {
      res.status(502).json({ ok: false, reason: String(err) });
    }
  });

  app.get("/events", (req, res) => {
    res.setHeader("Content-Type", "text/event-stream");
    res.setHeader("Cache-Control", "no-cache");
    res.flushHeaders();
    const timer = setInterval(() => {
      res.write(`data: ${JSON.stringify(session.view())}\n\n`);
    }, 500);
    req.on("close", () => clearInterval(timer));
  });

  const httpServer = await new Promise<http.Server>((resolve) => {
    const server = app.listen(options.httpPort, "127.0.0.1", () => resolve(server));
  });
  const address = httpServer.address();
  const boundPort = typeof address === "object" && address ? address.port : options.httpPort;

  return {
    session,
    client,
    httpServer,
    httpPort: boundPort,
    close: async () => {
      client.close();
      await new Promise<void>((resolve) => httpServer.close(() => resolve()));
    },
  };
}
