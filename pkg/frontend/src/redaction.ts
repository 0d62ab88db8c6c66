/**
 * Redaction semantics mirrored from the backend: the same greedy dwell sweep
 * with visit merging, the same first-matching-op attribution, the same
 * cell-popularity risk score. All computation runs client-side so the raw
 * trail never leaves the official's browser.
 */

import {
  GeoCell,
  GeoPoint,
  TrailPoint,
  coarsenCells,
  geoCellOf,
  haversineDistance,
} from "./geo.js";
import type { LocationTrail } from "./trail.js";

export const DEFAULT_DWELL_RADIUS_M = 50;
export const DEFAULT_MIN_DWELL_S = 45 * 60;
export const DEFAULT_TOP_K = 2;

export type RedactionOp =
  | { kind: "circle"; lat: number; lon: number; radiusM: number; reason: string }
  | { kind: "time_range"; startMs: number; endMs: number; reason: string }
  | { kind: "cell"; row: number; col: number; cellSizeM: number; reason: string };

export class InvalidOp extends Error {
  readonly code = "INVALID_OP";
}

export function validateOp(op: RedactionOp): void {
  if (op.kind === "circle" && !(op.radiusM > 0)) {
    throw new InvalidOp("circle radius must be > 0");
  }
  if (op.kind === "time_range" && !(op.startMs < op.endMs)) {
    throw new InvalidOp("time range start must precede end");
  }
  if (op.kind === "cell" && !(op.cellSizeM > 0)) {
    throw new InvalidOp("cell size must be > 0");
  }
}

export function opMatches(op: RedactionOp, p: TrailPoint): boolean {
  switch (op.kind) {
    case "circle":
      return haversineDistance({ lat: op.lat, lon: op.lon }, p.position) <= op.radiusM;
    case "time_range":
      return op.startMs <= p.timestampMs && p.timestampMs < op.endMs;
    case "cell": {
      const cell = geoCellOf(p.position, op.cellSizeM);
      return cell.row === op.row && cell.col === op.col;
    }
  }
}

export interface RedactionResult {
  kept: TrailPoint[];
  removedPerOp: number[];
}

/** Remove points matched by any op; each removal attributed to the first match. */
export function applyRedactions(points: TrailPoint[], ops: RedactionOp[]): RedactionResult {
  const removedPerOp = ops.map(() => 0);
  const kept: TrailPoint[] = [];
  outer: for (const p of points) {
    for (let i = 0; i < ops.length; i++) {
      if (opMatches(ops[i]!, p)) {
        removedPerOp[i]!++;
        continue outer;
      }
    }
    kept.push(p);
  }
  return { kept, removedPerOp };
}

export interface DwellCluster {
  centroid: GeoPoint;
  radiusM: number;
  totalDwellS: number;
  visitCount: number;
}

export function detectDwellClusters(
  trail: LocationTrail,
  radiusM: number,
  minDurationS: number,
): DwellCluster[] {
  const visits: Array<{ centroid: GeoPoint; dwellS: number }> = [];
  let run: TrailPoint[] = [];
  let latSum = 0;
  let lonSum = 0;

  const closeRun = () => {
    if (run.length) {
      const spanS = (run[run.length - 1]!.timestampMs - run[0]!.timestampMs) / 1000;
      if (spanS >= minDurationS) {
        visits.push({ centroid: { lat: latSum / run.length, lon: lonSum / run.length }, dwellS: spanS });
      }
    }
    run = [];
    latSum = 0;
    lonSum = 0;
  };

  for (const p of trail.points) {
    if (run.length) {
      const centroid = { lat: latSum / run.length, lon: lonSum / run.length };
      if (haversineDistance(centroid, p.position) > radiusM) closeRun();
    }
    run.push(p);
    latSum += p.position.lat;
    lonSum += p.position.lon;
  }
  closeRun();

  const merged: Array<{ latW: number; lonW: number; dwellS: number; visits: number }> = [];
  for (const v of visits) {
    let absorbed = false;
    for (const m of merged) {
      const existing = { lat: m.latW / m.dwellS, lon: m.lonW / m.dwellS };
      if (haversineDistance(existing, v.centroid) <= radiusM) {
        m.latW += v.centroid.lat * v.dwellS;
        m.lonW += v.centroid.lon * v.dwellS;
        m.dwellS += v.dwellS;
        m.visits += 1;
        absorbed = true;
        break;
      }
    }
    if (!absorbed) {
      merged.push({ latW: v.centroid.lat * v.dwellS, lonW: v.centroid.lon * v.dwellS, dwellS: v.dwellS, visits: 1 });
    }
  }

  return merged
    .map((m) => ({
      centroid: { lat: m.latW / m.dwellS, lon: m.lonW / m.dwellS },
      radiusM,
      totalDwellS: m.dwellS,
      visitCount: m.visits,
    }))
    .sort(
      (a, b) =>
        b.totalDwellS - a.totalDwellS ||
        b.visitCount - a.visitCount ||
        a.centroid.lat - b.centroid.lat ||
        a.centroid.lon - b.centroid.lon,
    );
}

/** Auto-redaction proposals: one circle per top-k dwell anchor, pre-flagged. */
export function autoRedactionProposals(
  trail: LocationTrail,
  radiusM = DEFAULT_DWELL_RADIUS_M,
  minDwellS = DEFAULT_MIN_DWELL_S,
  topK = DEFAULT_TOP_K,
): RedactionOp[] {
  if (topK <= 0 || trail.points.length === 0) return [];
  return detectDwellClusters(trail, radiusM, minDwellS)
    .slice(0, topK)
    .map((cluster, i) => ({
      kind: "circle" as const,
      lat: cluster.centroid.lat,
      lon: cluster.centroid.lon,
      radiusM,
      reason: `auto dwell anchor #${i + 1} (${(cluster.totalDwellS / 3600).toFixed(1)} h)`,
    }));
}

/** Fraction of published coarse cells seen by fewer than k background trails. */
export function reidentificationRisk(
  keptPoints: TrailPoint[],
  background: LocationTrail[],
  k: number,
  cellSizeM: number,
): number {
  const cells = coarsenCells(keptPoints, cellSizeM);
  if (!cells.length) return 0;
  const backgroundSets = background.map(
    (t) => new Set(coarsenCells(t.points, cellSizeM).map(([r, c]) => `${r}:${c}`)),
  );
  let risky = 0;
  for (const [r, c] of cells) {
    const key = `${r}:${c}`;
    let popularity = 0;
    for (const set of backgroundSets) if (set.has(key)) popularity++;
    if (popularity < k) risky++;
  }
  return risky / cells.length;
}

export function cellKey(cell: GeoCell): string {
  return `${cell.row}:${cell.col}`;
}
