/**
 * Embedding encoders behind one interface.
 *
 * The built-in family is a deterministic signed feature-hashing encoder:
 * character trigrams (text) or byte trigrams (image files) hashed into a
 * fixed number of buckets with FNV-1a, ±1 signs from a second hash. It is
 * not a learned model, but it is a real encoder in the contract's sense —
 * fixed output width, one vector per input, bit-reproducible across runs
 * and platforms — which makes it the right default for pipelines and tests
 * in environments where model checkpoints cannot be downloaded.
 *
 * Checkpoint-backed vision-language encoders plug in by implementing
 * `Encoder` and registering a factory (see README); loading failures must
 * surface as `ModelLoadFailure`.
 */
import { readFileSync } from "node:fs";

export class ModelLoadFailure extends Error {
  readonly code = "ModelLoadFailure";
}

export class UnreadableInput extends Error {
  readonly code = "UnreadableInput";
}

export interface Encoder {
  /** Registry id, recorded in provenance. */
  readonly id: string;
  /** Output embedding width; constant across a job. */
  readonly dim: number;
  /** Maximum text length in characters; longer inputs are truncated (head). */
  readonly contextLength: number;
  /** Human-readable checkpoint/algorithm reference for provenance. */
  readonly checkpoint: string;
  embedText(texts: string[]): Promise<number[][]>;
  /** Sources are URIs; file paths that exist are encoded from their bytes. */
  embedImage(sources: string[]): Promise<number[][]>;
}

function fnv1a(bytes: ArrayLike<number>, seed: number): number {
  let hash = (0x811c9dc5 ^ seed) >>> 0;
  for (let i = 0; i < bytes.length; i++) {
    hash = (hash ^ (bytes[i] & 0xff)) >>> 0;
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

export class FeatureHashEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;
  readonly contextLength = 8192;
  readonly checkpoint = "builtin signed FNV-1a trigram hashing (no checkpoint)";

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 8) {
      throw new ModelLoadFailure(`feature-hash dimension must be an integer >= 8, got ${dim}`);
    }
    this.dim = dim;
    this.id = `feature-hash-${dim}`;
  }

  private hashGrams(bytes: Uint8Array, domainSeed: number): number[] {
    const vec = new Array<number>(this.dim).fill(0);
    if (bytes.length === 0) {
      return vec;
    }
    // pad so single-byte inputs still produce one trigram
    const padded = new Uint8Array(bytes.length + 2);
    padded.set(bytes, 1);
    for (let i = 0; i + 3 <= padded.length; i++) {
      const gram = padded.subarray(i, i + 3);
      const bucket = fnv1a(gram, domainSeed) % this.dim;
      const sign = fnv1a(gram, domainSeed ^ 0x5bd1e995) & 1 ? 1 : -1;
      vec[bucket] += sign;
    }
    return vec;
  }

  async embedText(texts: string[]): Promise<number[][]> {
    const enc = new TextEncoder();
    return texts.map((t) => this.hashGrams(enc.encode(t.normalize("NFC").toLowerCase()), 0x7465));
  }

  async embedImage(sources: string[]): Promise<number[][]> {
    return sources.map((source) => {
      let bytes: Uint8Array;
      try {
        bytes = readFileSync(source);
      } catch {
        // non-file URI (remote or synthetic): encode the identifier itself
        bytes = new TextEncoder().encode(source);
      }
      return this.hashGrams(bytes, 0x696d);
    });
  }
}

const HASH_PATTERN = /^feature-hash-(\d+)$/;

/** Known checkpoint-backed model ids and why they are not bundled. */
export const EXTERNAL_MODEL_HINT =
  "checkpoint-backed vision-language encoders (CLIP-style dual encoders, " +
  "captioning-based models) need downloadable weights; implement Encoder " +
  "around your runtime of choice and register it here";

export function createEncoder(modelId: string): Encoder {
  const match = HASH_PATTERN.exec(modelId);
  if (match) {
    return new FeatureHashEncoder(Number(match[1]));
  }
  if (modelId === "feature-hash") {
    return new FeatureHashEncoder(256);
  }
  throw new ModelLoadFailure(
    `unknown model id ${JSON.stringify(modelId)}; built-ins: feature-hash, ` +
      `feature-hash-<dim>. ${EXTERNAL_MODEL_HINT}`,
  );
}
