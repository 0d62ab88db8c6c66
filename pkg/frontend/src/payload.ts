/** Carrier payload records in the exact wire shape the publication service stores. */

import { TrailPoint, coarsenCells } from "./geo.js";
import { GridParams, hashTokensHex, toHex } from "./tokens.js";

export const COARSE_CELL_SIZE_M = 100;

export interface PayloadRecord {
  payload_id: string;
  epoch: number;
  salt_epoch: string;
  kind: "cells" | "tokens";
  published_at_ms: number;
  window: [number, number];
  cell_size_m?: number;
  cells?: Array<[number, number]>;
  grid?: { d_max_m: number; dt_max_s: number; cell_size_m: number; bucket_len_s: number };
  tokens?: string[];
}

async function sourceDigest(keptSerialized: string): Promise<string> {
  const data = new TextEncoder().encode(keptSerialized);
  return toHex(new Uint8Array(await crypto.subtle.digest("SHA-256", data)));
}

/** Both publication tiers from the redacted remainder of a trail. */
export async function buildPayloadRecords(
  kept: TrailPoint[],
  keptSerialized: string,
  epoch: number,
  salt: Uint8Array,
  grid: GridParams,
  publishedAtMs: number,
): Promise<[PayloadRecord, PayloadRecord]> {
  if (!kept.length) throw new Error("nothing left to publish after redaction");
  const windowStart = kept[0]!.timestampMs;
  const windowEnd = kept[kept.length - 1]!.timestampMs;
  const baseId = (await sourceDigest(keptSerialized)).slice(0, 12);
  const common = {
    epoch,
    salt_epoch: toHex(salt),
    published_at_ms: publishedAtMs,
    window: [windowStart, windowEnd] as [number, number],
  };
  const cellsRecord: PayloadRecord = {
    payload_id: `pl-${baseId}-cells`,
    kind: "cells",
    cell_size_m: COARSE_CELL_SIZE_M,
    cells: coarsenCells(kept, COARSE_CELL_SIZE_M),
    ...common,
  };
  const tokensRecord: PayloadRecord = {
    payload_id: `pl-${baseId}-tokens`,
    kind: "tokens",
    grid: {
      d_max_m: grid.dMaxM,
      dt_max_s: grid.dtMaxS,
      cell_size_m: grid.cellSizeM,
      bucket_len_s: grid.bucketLenS,
    },
    tokens: await hashTokensHex(kept, grid, salt, true),
    ...common,
  };
  return [cellsRecord, tokensRecord];
}

/** Canonical serialization: sorted keys, so equality is byte-comparable. */
export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}
