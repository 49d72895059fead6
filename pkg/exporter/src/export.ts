/**
 * Batch export: metadata JSONL in, mbstore-v1 directory out.
 *
 * Hard rules: every input row yields exactly one output row in order; any
 * unreadable row fails the whole job (silent skipping would desynchronize
 * qrels built against the input ids). Texts beyond the encoder's context
 * are truncated head-first, warned about once, and the policy is recorded
 * in provenance.json next to the model and checkpoint reference.
 */
import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { Encoder, ModelLoadFailure, UnreadableInput, createEncoder } from "./encoders.js";
import { ItemMeta, validateMeta, writeStore } from "./mbstore.js";

export interface ExportJob {
  modelId: string;
  inputMeta: string;
  outDir: string;
  batchSize: number;
  device?: string;
}

export interface ExportSummary {
  count: number;
  dim: number;
  truncatedRows: number;
  outDir: string;
}

function parseMetaFile(path: string): ItemMeta[] {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new UnreadableInput(`cannot read ${path}: ${(err as Error).message}`);
  }
  const rows: ItemMeta[] = [];
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let parsed: Record<string, unknown>;
    try {
      parsed = JSON.parse(line);
    } catch (err) {
      throw new UnreadableInput(`${path} line ${i}: ${(err as Error).message}`);
    }
    const row: ItemMeta = {
      id: parsed.id as string,
      modality: parsed.modality as ItemMeta["modality"],
      text: (parsed.text ?? null) as string | null,
      uri: (parsed.uri ?? null) as string | null,
    };
    rows.push(row);
  }
  if (rows.length === 0) {
    throw new UnreadableInput(`${path}: no metadata rows`);
  }
  try {
    validateMeta(rows);
  } catch (err) {
    throw new UnreadableInput((err as Error).message);
  }
  for (const row of rows) {
    if (row.modality === "text" && (!row.text || row.text.length === 0)) {
      throw new UnreadableInput(`row ${row.id}: text item without text`);
    }
    if (row.modality === "image" && (!row.uri || row.uri.length === 0)) {
      throw new UnreadableInput(`row ${row.id}: image item without uri`);
    }
  }
  return rows;
}

async function encodeBatch(
  encoder: Encoder,
  rows: ItemMeta[],
  truncated: { count: number },
): Promise<number[][]> {
  const textRows: number[] = [];
  const imageRows: number[] = [];
  rows.forEach((row, i) => (row.modality === "text" ? textRows : imageRows).push(i));

  const texts = textRows.map((i) => {
    const text = rows[i].text as string;
    if (text.length > encoder.contextLength) {
      truncated.count += 1;
      return text.slice(0, encoder.contextLength);
    }
    return text;
  });
  const sources = imageRows.map((i) => rows[i].uri as string);

  const out = new Array<number[]>(rows.length);
  const textVecs = texts.length ? await encoder.embedText(texts) : [];
  const imageVecs = sources.length ? await encoder.embedImage(sources) : [];
  textRows.forEach((rowIdx, j) => (out[rowIdx] = textVecs[j]));
  imageRows.forEach((rowIdx, j) => (out[rowIdx] = imageVecs[j]));
  return out;
}

export async function runExport(job: ExportJob): Promise<ExportSummary> {
  if (!Number.isInteger(job.batchSize) || job.batchSize < 1) {
    throw new UnreadableInput(`batch size must be a positive integer, got ${job.batchSize}`);
  }
  const encoder = createEncoder(job.modelId); // ModelLoadFailure on unknown ids
  const rows = parseMetaFile(job.inputMeta);

  const truncated = { count: 0 };
  const vectors: number[][] = [];
  for (let start = 0; start < rows.length; start += job.batchSize) {
    const batch = rows.slice(start, start + job.batchSize);
    vectors.push(...(await encodeBatch(encoder, batch, truncated)));
  }
  for (let i = 0; i < vectors.length; i++) {
    if (vectors[i].length !== encoder.dim) {
      throw new ModelLoadFailure(
        `encoder emitted width ${vectors[i].length} for row ${rows[i].id}, advertised ${encoder.dim}`,
      );
    }
  }
  if (truncated.count > 0) {
    process.stderr.write(
      `warning: ${truncated.count} text(s) exceeded the ${encoder.contextLength}-char ` +
        "context and were truncated (head policy; recorded in provenance.json)\n",
    );
  }

  const written = writeStore(job.outDir, rows, vectors);
  const provenance = {
    format: "mbprov-v1",
    model_id: encoder.id,
    checkpoint: encoder.checkpoint,
    dim: encoder.dim,
    preprocessing: {
      text: "NFC normalize, lowercase, UTF-8 char trigrams, signed FNV-1a hashing",
      image: "file bytes when the uri is a readable path, else the uri string; byte trigrams",
      truncation: {
        policy: "head",
        context_length: encoder.contextLength,
        truncated_rows: truncated.count,
      },
    },
    batch_size: job.batchSize,
    device: job.device ?? "cpu",
    input_meta: job.inputMeta,
    count: written.count,
    sha256_vectors: written.sha256Vectors,
  };
  writeFileSync(join(job.outDir, "provenance.json"), JSON.stringify(provenance, null, 2) + "\n");
  return {
    count: written.count,
    dim: written.dim,
    truncatedRows: truncated.count,
    outDir: job.outDir,
  };
}
