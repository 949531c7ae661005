// Deterministic stand-in scorer: hashes the (caption, visual) pair and maps
// the hash onto [0, 1). No model assets, no I/O, fully reproducible, which is
// what protocol and pipeline tests want. The score carries no semantic
// meaning and is intentionally asymmetric in its arguments.

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK_64 = (1n << 64n) - 1n;
const TWO_64 = 2 ** 64;

/** 64-bit FNV-1a over a byte sequence. */
export function fnv1a64(data: Uint8Array): bigint {
  let hash = FNV_OFFSET;
  for (const byte of data) {
    hash ^= BigInt(byte);
    hash = (hash * FNV_PRIME) & MASK_64;
  }
  return hash;
}

/**
 * Score a caption against a visual description without a model.
 *
 * The two strings are joined with a unit-separator byte (0x1f) so that
 * ("ab", "c") and ("a", "bc") hash differently, then the UTF-8 bytes are
 * run through FNV-1a and the 64-bit result is scaled into [0, 1).
 */
export function mockScore(caption: string, visual: string): number {
  const payload = new TextEncoder().encode(`${caption}\x1f${visual}`);
  return Number(fnv1a64(payload)) / TWO_64;
}
