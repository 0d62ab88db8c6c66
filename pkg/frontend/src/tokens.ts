/**
 * Salted space-time tokens, digest-compatible with the backend:
 * sha256(salt ‖ int64be(row) ‖ int64be(col) ‖ int64be(bucket)).
 *
 * The token *count* (used by the live preview) is synchronous — it only needs
 * the distinct expanded (cell, bucket) tuples. Actual digests (needed at
 * publish time) go through WebCrypto, which exists in both browsers and Node.
 */

import { TrailPoint, geoCellOf, timeBucketOf } from "./geo.js";

export interface GridParams {
  dMaxM: number;
  dtMaxS: number;
  cellSizeM: number;
  bucketLenS: number;
}

export const DEFAULT_GRID: GridParams = { dMaxM: 10, dtMaxS: 300, cellSizeM: 10, bucketLenS: 300 };

function expandedTuples(points: TrailPoint[], grid: GridParams, expand: boolean): Set<string> {
  const offsets = expand ? [-1, 0, 1] : [0];
  const tuples = new Set<string>();
  for (const p of points) {
    const cell = geoCellOf(p.position, grid.cellSizeM);
    const bucket = timeBucketOf(p.timestampMs, grid.bucketLenS);
    for (const dr of offsets)
      for (const dc of offsets)
        for (const db of offsets) {
          tuples.add(`${cell.row + dr}:${cell.col + dc}:${bucket + db}`);
        }
  }
  return tuples;
}

export function tokenCount(points: TrailPoint[], grid: GridParams, expand = true): number {
  return expandedTuples(points, grid, expand).size;
}

function int64be(view: DataView, offset: number, value: number): void {
  view.setBigInt64(offset, BigInt(value), false);
}

async function sha256(data: Uint8Array): Promise<Uint8Array> {
  const digest = await crypto.subtle.digest("SHA-256", data as BufferSource);
  return new Uint8Array(digest);
}

export async function spaceTimeToken(
  salt: Uint8Array,
  row: number,
  col: number,
  bucket: number,
): Promise<Uint8Array> {
  const buf = new Uint8Array(salt.length + 24);
  buf.set(salt, 0);
  const view = new DataView(buf.buffer, salt.length);
  int64be(view, 0, row);
  int64be(view, 8, col);
  int64be(view, 16, bucket);
  return sha256(buf);
}

export function toHex(bytes: Uint8Array): string {
  return [...bytes].map((b) => b.toString(16).padStart(2, "0")).join("");
}

export function fromHex(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  return out;
}

/** Sorted hex digests for every expanded occupied tuple (the carrier tier). */
export async function hashTokensHex(
  points: TrailPoint[],
  grid: GridParams,
  salt: Uint8Array,
  expand = true,
): Promise<string[]> {
  const tuples = expandedTuples(points, grid, expand);
  const digests: string[] = [];
  for (const tuple of tuples) {
    const [row, col, bucket] = tuple.split(":").map(Number) as [number, number, number];
    digests.push(toHex(await spaceTimeToken(salt, row, col, bucket)));
  }
  digests.sort();
  return digests;
}

export function newSaltEpoch(): Uint8Array {
  const salt = new Uint8Array(16);
  crypto.getRandomValues(salt);
  return salt;
}
