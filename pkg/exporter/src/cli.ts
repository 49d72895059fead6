#!/usr/bin/env node
/**
 * CLI: export --model <id> --meta <jsonl> --out <dir> [--batch-size <int>] [--device <str>]
 *
 * Exit codes match the engine's conventions: 0 success, 1 job error with a
 * {"error", "message"} diagnostic on stderr, 2 usage error.
 */
import { ModelLoadFailure, UnreadableInput } from "./encoders.js";
import { StoreFormatError } from "./mbstore.js";
import { runExport } from "./export.js";

interface ParsedArgs {
  model: string;
  meta: string;
  out: string;
  batchSize: number;
  device?: string;
}

function usage(message?: string): never {
  if (message) {
    process.stderr.write(`error: ${message}\n`);
  }
  process.stderr.write(
    "usage: mbstore-export export --model <id> --meta <jsonl> --out <dir> " +
      "[--batch-size <int>] [--device <str>]\n",
  );
  process.exit(2);
}

function parseArgs(argv: string[]): ParsedArgs {
  if (argv[0] !== "export") {
    usage(`unknown command ${JSON.stringify(argv[0] ?? "")}`);
  }
  const flags = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      usage(`bad flag ${JSON.stringify(argv[i])}`);
    }
    flags.set(argv[i].slice(2), argv[i + 1]);
  }
  for (const required of ["model", "meta", "out"]) {
    if (!flags.has(required)) {
      usage(`--${required} is required`);
    }
  }
  const batchSize = Number(flags.get("batch-size") ?? "32");
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    usage(`--batch-size must be a positive integer`);
  }
  return {
    model: flags.get("model")!,
    meta: flags.get("meta")!,
    out: flags.get("out")!,
    batchSize,
    device: flags.get("device"),
  };
}

export async function main(argv: string[]): Promise<number> {
  const args = parseArgs(argv);
  try {
    const summary = await runExport({
      modelId: args.model,
      inputMeta: args.meta,
      outDir: args.out,
      batchSize: args.batchSize,
      device: args.device,
    });
    process.stdout.write(
      `exported ${summary.count} items (dim ${summary.dim}) to ${summary.outDir}\n`,
    );
    return 0;
  } catch (err) {
    if (
      err instanceof ModelLoadFailure ||
      err instanceof UnreadableInput ||
      err instanceof StoreFormatError
    ) {
      process.stderr.write(JSON.stringify({ error: err.code, message: err.message }) + "\n");
      return 1;
    }
    throw err;
  }
}

const isDirectRun = process.argv[1]?.endsWith("cli.js");
if (isDirectRun) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
