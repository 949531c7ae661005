// Line-delimited JSON protocol server (version 1).
//
// Requests arrive one per line on stdin, responses leave one per line on
// stdout, in request order. The loop is single-threaded on purpose: the
// client is synchronous and ordering is part of the contract.
//
//   {"op": "hello", "version": 1}              -> {"ok": true, "name": ..., "version": 1}
//   {"id": N, "op": "score",
//    "caption": "...", "visual": "..."}        -> {"id": N, "score": S} | {"id": N, "error": "..."}
//   {"op": "bye"}                              -> process exits 0
//
// A request we cannot even attribute to an id (unparseable JSON, non-object,
// or an object with no id and no recognised op) is unrecoverable: note it on
// stderr and exit 1. Anything addressable gets an error response instead.

import { createInterface } from "node:readline";
import { mockScore } from "./mock.js";
import { SentenceScorer } from "./neural.js";

export const PROTOCOL_VERSION = 1;

export interface AdapterConfig {
  mode: "mock" | "neural";
  modelName: string;
  device: string;
}

export async function serve(cfg: AdapterConfig): Promise<void> {
  const neural = cfg.mode === "neural" ? new SentenceScorer(cfg.modelName, cfg.device) : null;

  const score = async (caption: string, visual: string): Promise<number> => {
    if (neural !== null) {
      return neural.score(caption, visual);
    }
    return mockScore(caption, visual);
  };

  const reply = (payload: object): void => {
    process.stdout.write(JSON.stringify(payload) + "\n");
  };

  const rl = createInterface({ input: process.stdin, terminal: false });
  for await (const line of rl) {
    if (!line.trim()) {
      continue;
    }

    let request: unknown;
    try {
      request = JSON.parse(line);
    } catch {
      process.stderr.write(`unparseable request line: ${line}\n`);
      process.exit(1);
    }
    if (typeof request !== "object" || request === null || Array.isArray(request)) {
      process.stderr.write(`request is not a JSON object: ${line}\n`);
      process.exit(1);
    }

    const req = request as Record<string, unknown>;
    const op = req["op"];

    if (op === "hello") {
      reply({ ok: true, name: `caprank-adapter:${cfg.mode}`, version: PROTOCOL_VERSION });
      continue;
    }
    if (op === "bye") {
      process.exit(0);
    }

    const id = req["id"];
    if (typeof id !== "number") {
      process.stderr.write(`request has no usable id: ${line}\n`);
      process.exit(1);
    }

    if (op !== "score") {
      reply({ id, error: `unknown op ${JSON.stringify(op)}` });
      continue;
    }
    const caption = req["caption"];
    const visual = req["visual"];
    if (typeof caption !== "string" || typeof visual !== "string") {
      reply({ id, error: "score request needs string 'caption' and 'visual' fields" });
      continue;
    }

    try {
      reply({ id, score: await score(caption, visual) });
    } catch (err) {
      reply({ id, error: err instanceof Error ? err.message : String(err) });
    }
  }
}
