/**
 * mbstore-v1 directory writer/reader.
 *
 * Layout (shared with the retrieval engine that consumes these stores):
 * - manifest.json   {"format": "mbstore-v1", "dim", "count", "normalized": true, "sha256_vectors"}
 * - meta.jsonl      one object per item, ascending id, row-aligned with the vector block
 * - vectors.f32le   row-major float32 little-endian
 *
 * Vectors are L2-normalized in float64 before the float32 cast. Rows must
 * already be sorted by id ascending: the format requires ascending ids and
 * the exporter guarantees output row order equals input row order, so the
 * writer rejects unsorted input instead of silently reordering it.
 */
import { createHash } from "node:crypto";
import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

export const STORE_FORMAT = "mbstore-v1";
export const NORM_TOLERANCE = 1e-4;
export const ZERO_NORM = 1e-12;

export type Modality = "text" | "image";

export interface ItemMeta {
  id: string;
  modality: Modality;
  text: string | null;
  uri: string | null;
}

export class StoreFormatError extends Error {
  readonly code: string;
  constructor(code: string, message: string) {
    super(message);
    this.code = code;
  }
}

/** JSON object line with the same spacing the engine's writer emits. */
export function jsonLine(obj: Record<string, unknown>): string {
  const parts = Object.entries(obj).map(
    ([key, value]) => `${JSON.stringify(key)}: ${JSON.stringify(value)}`,
  );
  return `{${parts.join(", ")}}\n`;
}

export function sha256Hex(data: Uint8Array): string {
  return createHash("sha256").update(data).digest("hex");
}

function normalizeRow(row: ArrayLike<number>, rowIndex: number, id: string): Float64Array {
  const out = new Float64Array(row.length);
  let squared = 0;
  for (let j = 0; j < row.length; j++) {
    const v = Number(row[j]);
    if (!Number.isFinite(v)) {
      throw new StoreFormatError("UnreadableInput", `row ${rowIndex} (${id}): non-finite component`);
    }
    out[j] = v;
    squared += v * v;
  }
  const norm = Math.sqrt(squared);
  if (norm < ZERO_NORM) {
    throw new StoreFormatError("UnreadableInput", `row ${rowIndex} (${id}): near-zero embedding`);
  }
  for (let j = 0; j < out.length; j++) {
    out[j] /= norm;
  }
  return out;
}

/** Validate metadata rows: ascending unique non-empty ids, known modality. */
export function validateMeta(rows: ItemMeta[]): void {
  for (let i = 0; i < rows.length; i++) {
    const row = rows[i];
    if (typeof row.id !== "string" || row.id.length === 0) {
      throw new StoreFormatError("UnreadableInput", `meta row ${i}: id must be a non-empty string`);
    }
    if (row.modality !== "text" && row.modality !== "image") {
      throw new StoreFormatError("UnreadableInput", `meta row ${i} (${row.id}): bad modality`);
    }
    if (i > 0) {
      if (rows[i - 1].id === row.id) {
        throw new StoreFormatError("UnreadableInput", `duplicate id ${row.id}`);
      }
      if (rows[i - 1].id > row.id) {
        throw new StoreFormatError(
          "UnreadableInput",
          `input metadata must be sorted by id ascending (${rows[i - 1].id} > ${row.id})`,
        );
      }
    }
  }
}

export interface WrittenStore {
  dim: number;
  count: number;
  sha256Vectors: string;
}

/** Write a complete store directory; rows and vectors must be row-aligned. */
export function writeStore(
  outDir: string,
  rows: ItemMeta[],
  vectors: ArrayLike<number>[],
): WrittenStore {
  if (rows.length !== vectors.length) {
    throw new StoreFormatError(
      "UnreadableInput",
      `${rows.length} metadata rows but ${vectors.length} vectors`,
    );
  }
  validateMeta(rows);
  const dim = vectors.length > 0 ? vectors[0].length : 0;
  if (vectors.length > 0 && dim < 1) {
    throw new StoreFormatError("UnreadableInput", "embedding dimension must be at least 1");
  }

  const block = Buffer.alloc(rows.length * dim * 4);
  const view = new DataView(block.buffer, block.byteOffset, block.byteLength);
  for (let i = 0; i < vectors.length; i++) {
    if (vectors[i].length !== dim) {
      throw new StoreFormatError(
        "UnreadableInput",
        `row ${i} (${rows[i].id}): dimension ${vectors[i].length} != ${dim}`,
      );
    }
    const unit = normalizeRow(vectors[i], i, rows[i].id);
    for (let j = 0; j < dim; j++) {
      view.setFloat32((i * dim + j) * 4, unit[j], true);
    }
  }

  const manifest = {
    format: STORE_FORMAT,
    dim,
    count: rows.length,
    normalized: true,
    sha256_vectors: sha256Hex(block),
  };
  mkdirSync(outDir, { recursive: true });
  writeFileSync(join(outDir, "vectors.f32le"), block);
  writeFileSync(
    join(outDir, "meta.jsonl"),
    rows.map((r) => jsonLine({ id: r.id, modality: r.modality, text: r.text, uri: r.uri })).join(""),
  );
  writeFileSync(join(outDir, "manifest.json"), JSON.stringify(manifest, null, 2) + "\n");
  return { dim, count: rows.length, sha256Vectors: manifest.sha256_vectors };
}

export interface LoadedStore {
  dim: number;
  rows: ItemMeta[];
  vectors: Float32Array[];
}

/** Read a store back, verifying checksum, alignment, and unit norms. */
export function readStore(dir: string): LoadedStore {
  const manifest = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8"));
  if (manifest.format !== STORE_FORMAT) {
    throw new StoreFormatError("UnreadableInput", `${dir}: not a ${STORE_FORMAT} directory`);
  }
  const block = readFileSync(join(dir, "vectors.f32le"));
  if (sha256Hex(block) !== manifest.sha256_vectors) {
    throw new StoreFormatError("UnreadableInput", `${dir}: vector checksum mismatch`);
  }
  const rows = readFileSync(join(dir, "meta.jsonl"), "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as ItemMeta);
  const { dim, count } = manifest;
  if (rows.length !== count || block.length !== count * dim * 4) {
    throw new StoreFormatError("UnreadableInput", `${dir}: row/block misalignment`);
  }
  const view = new DataView(block.buffer, block.byteOffset, block.byteLength);
  const vectors: Float32Array[] = [];
  for (let i = 0; i < count; i++) {
    const row = new Float32Array(dim);
    let squared = 0;
    for (let j = 0; j < dim; j++) {
      row[j] = view.getFloat32((i * dim + j) * 4, true);
      squared += row[j] * row[j];
    }
    if (Math.abs(Math.sqrt(squared) - 1) > NORM_TOLERANCE) {
      throw new StoreFormatError("UnreadableInput", `${dir} row ${i}: norm out of tolerance`);
    }
    vectors.push(row);
  }
  return { dim, rows, vectors };
}
