/** `.trail.jsonl` parsing/serialization, bit-compatible with the CLI tools. */

import type { TrailPoint } from "./geo.js";

export interface LocationTrail {
  ownerId: string;
  points: TrailPoint[];
}

export class ParseError extends Error {
  readonly code = "PARSE_ERROR";
  constructor(
    readonly source: string,
    readonly lineNo: number,
    reason: string,
  ) {
    super(`${source}:${lineNo}: ${reason}`);
  }
}

export function parseTrail(text: string, ownerId: string, source = "<input>"): LocationTrail {
  const points: TrailPoint[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i]!;
    if (!line.trim()) continue;
    const lineNo = i + 1;
    let record: unknown;
    try {
      record = JSON.parse(line);
    } catch (err) {
      throw new ParseError(source, lineNo, `not JSON: ${(err as Error).message}`);
    }
    const rec = record as { lat?: unknown; lon?: unknown; ts?: unknown };
    if (
      typeof rec !== "object" ||
      rec === null ||
      typeof rec.lat !== "number" ||
      typeof rec.lon !== "number" ||
      typeof rec.ts !== "number" ||
      !Number.isFinite(rec.lat) ||
      !Number.isFinite(rec.lon) ||
      !Number.isInteger(rec.ts)
    ) {
      throw new ParseError(source, lineNo, "expected {lat: number, lon: number, ts: int}");
    }
    if (rec.lat < -90 || rec.lat > 90) {
      throw new ParseError(source, lineNo, `latitude out of range: ${rec.lat}`);
    }
    const prev = points[points.length - 1];
    if (prev && rec.ts <= prev.timestampMs) {
      throw new ParseError(source, lineNo, "timestamps must be strictly increasing");
    }
    points.push({ position: { lat: rec.lat, lon: rec.lon }, timestampMs: rec.ts });
  }
  return { ownerId, points };
}

export function dumpTrail(trail: LocationTrail): string {
  return trail.points
    .map((p) => JSON.stringify({ lat: p.position.lat, lon: p.position.lon, ts: p.timestampMs }))
    .join("\n")
    .concat(trail.points.length ? "\n" : "");
}
