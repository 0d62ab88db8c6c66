/** Redaction-ops file (`.ops.jsonl`), bit-compatible with the CLI's format. */

import { RedactionOp, validateOp } from "./redaction.js";
import { ParseError } from "./trail.js";

export function opToRecord(op: RedactionOp): Record<string, unknown> {
  switch (op.kind) {
    case "circle":
      return { kind: "circle", lat: op.lat, lon: op.lon, radius_m: op.radiusM, reason: op.reason };
    case "time_range":
      return { kind: "time_range", start_ms: op.startMs, end_ms: op.endMs, reason: op.reason };
    case "cell":
      return { kind: "cell", row: op.row, col: op.col, cell_size_m: op.cellSizeM, reason: op.reason };
  }
}

export function opFromRecord(rec: Record<string, unknown>): RedactionOp {
  const reason = typeof rec.reason === "string" ? rec.reason : "";
  let op: RedactionOp;
  switch (rec.kind) {
    case "circle":
      op = {
        kind: "circle",
        lat: Number(rec.lat),
        lon: Number(rec.lon),
        radiusM: Number(rec.radius_m),
        reason,
      };
      break;
    case "time_range":
      op = { kind: "time_range", startMs: Number(rec.start_ms), endMs: Number(rec.end_ms), reason };
      break;
    case "cell":
      op = {
        kind: "cell",
        row: Number(rec.row),
        col: Number(rec.col),
        cellSizeM: Number(rec.cell_size_m),
        reason,
      };
      break;
    default:
      throw new Error(`unknown redaction kind: ${String(rec.kind)}`);
  }
  validateOp(op);
  for (const value of Object.values(opToRecord(op))) {
    if (typeof value === "number" && !Number.isFinite(value)) {
      throw new Error("non-finite op parameter");
    }
  }
  return op;
}

export function parseOpsFile(text: string, source = "<ops>"): RedactionOp[] {
  const ops: RedactionOp[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i]!;
    if (!line.trim()) continue;
    try {
      ops.push(opFromRecord(JSON.parse(line) as Record<string, unknown>));
    } catch (err) {
      throw new ParseError(source, i + 1, (err as Error).message);
    }
  }
  return ops;
}

export function dumpOpsFile(ops: RedactionOp[]): string {
  return ops
    .map((op) => JSON.stringify(opToRecord(op)))
    .join("\n")
    .concat(ops.length ? "\n" : "");
}
