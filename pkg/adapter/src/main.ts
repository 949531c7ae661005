#!/usr/bin/env node
// CLI entry point: parse flags, pick a scorer, hand stdin/stdout to serve().

import { parseArgs } from "node:util";
import { DEFAULT_MODEL } from "./neural.js";
import { serve, type AdapterConfig } from "./server.js";

const USAGE = "usage: caprank-adapter --mode {mock|neural} [--model NAME] [--device DEVICE]";

function parseConfig(argv: string[]): AdapterConfig {
  let values: { mode?: string; model?: string; device?: string };
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        mode: { type: "string", default: "mock" },
        model: { type: "string", default: DEFAULT_MODEL },
        device: { type: "string", default: "cpu" },
      },
    }));
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : String(err)}\n${USAGE}\n`);
    process.exit(2);
  }
  if (values.mode !== "mock" && values.mode !== "neural") {
    process.stderr.write(`unknown --mode ${JSON.stringify(values.mode)}\n${USAGE}\n`);
    process.exit(2);
  }
  return { mode: values.mode, modelName: values.model!, device: values.device! };
}

serve(parseConfig(process.argv.slice(2))).catch((err) => {
  process.stderr.write(`adapter crashed: ${err instanceof Error ? err.stack ?? err.message : String(err)}\n`);
  process.exit(1);
});
