import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterEach, describe, expect, it } from "vitest";

import { ItemMeta, StoreFormatError, jsonLine, readStore, sha256Hex, writeStore } from "../src/mbstore.js";

const cleanups: string[] = [];

function tempDir(): string {
  const dir = mkdtempSync(join(tmpdir(), "mbstore-"));
  cleanups.push(dir);
  return dir;
}

afterEach(() => {
  while (cleanups.length) {
    rmSync(cleanups.pop()!, { recursive: true, force: true });
  }
});

const rows: ItemMeta[] = [
  { id: "i1", modality: "image", text: null, uri: "img://1" },
  { id: "t1", modality: "text", text: "alpha", uri: null },
];

describe("writeStore", () => {
  it("normalizes vectors and records a matching checksum", () => {
    const dir = tempDir();
    const written = writeStore(dir, rows, [
      [3, 4],
      [0.999, 0],
    ]);
    expect(written).toMatchObject({ dim: 2, count: 2 });
    const manifest = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8"));
    expect(manifest.format).toBe("mbstore-v1");
    expect(manifest.normalized).toBe(true);
    const block = readFileSync(join(dir, "vectors.f32le"));
    expect(sha256Hex(block)).toBe(manifest.sha256_vectors);

    const loaded = readStore(dir);
    for (const vec of loaded.vectors) {
      let squared = 0;
      for (const v of vec) squared += v * v;
      expect(Math.abs(Math.sqrt(squared) - 1)).toBeLessThan(1e-4);
    }
  });

  it("emits meta rows in the engine's line format", () => {
    const dir = tempDir();
    writeStore(dir, rows, [
      [1, 0],
      [0, 1],
    ]);
    const lines = readFileSync(join(dir, "meta.jsonl"), "utf-8").trimEnd().split("\n");
    expect(lines[0]).toBe('{"id": "i1", "modality": "image", "text": null, "uri": "img://1"}');
    expect(lines[1]).toBe('{"id": "t1", "modality": "text", "text": "alpha", "uri": null}');
  });

  it("rejects unsorted, duplicate, and zero-norm input", () => {
    const dir = tempDir();
    expect(() => writeStore(dir, [rows[1], rows[0]], [[1, 0], [0, 1]])).toThrow(StoreFormatError);
    expect(() => writeStore(dir, [rows[0], rows[0]], [[1, 0], [0, 1]])).toThrow(/duplicate/);
    expect(() => writeStore(dir, rows, [[0, 0], [0, 1]])).toThrow(/near-zero/);
    expect(() => writeStore(dir, rows, [[1, 0]])).toThrow(/metadata rows/);
  });

  it("round-trips byte-stably", () => {
    const a = tempDir();
    const b = tempDir();
    const vectors = [
      [0.1, -0.7, 0.4],
      [0.9, 0.2, -0.3],
    ];
    const threeDimRows = rows.map((r) => ({ ...r }));
    writeStore(a, threeDimRows, vectors);
    writeStore(b, threeDimRows, vectors);
    for (const name of ["manifest.json", "meta.jsonl", "vectors.f32le"]) {
      expect(readFileSync(join(a, name))).toEqual(readFileSync(join(b, name)));
    }
  });
});

describe("jsonLine", () => {
  it("uses python-style separators", () => {
    expect(jsonLine({ a: 1, b: null })).toBe('{"a": 1, "b": null}\n');
  });
});
