/**
 * Geometry primitives, kept numerically identical to the backend: same sphere
 * radius, same equirectangular grid anchored at (0°, 0°), same flooring.
 * Conformance fixtures in ../fixtures are generated by the backend and the
 * tests assert cell-level equality.
 */

export const EARTH_RADIUS_M = 6_371_000;
export const METERS_PER_DEGREE = 111_320;
export const MS_PER_DAY = 86_400_000;

export interface GeoPoint {
  lat: number;
  lon: number;
}

export interface TrailPoint {
  position: GeoPoint;
  timestampMs: number;
}

export interface GeoCell {
  row: number;
  col: number;
  cellSizeM: number;
}

export function normalizeLon(lon: number): number {
  let wrapped = ((lon + 180) % 360 + 360) % 360;
  return wrapped - 180;
}

export function haversineDistance(a: GeoPoint, b: GeoPoint): number {
  const rad = Math.PI / 180;
  const phi1 = a.lat * rad;
  const phi2 = b.lat * rad;
  const dphi = (b.lat - a.lat) * rad;
  const dlam = (b.lon - a.lon) * rad;
  const h =
    Math.sin(dphi / 2) ** 2 + Math.cos(phi1) * Math.cos(phi2) * Math.sin(dlam / 2) ** 2;
  return 2 * EARTH_RADIUS_M * Math.asin(Math.min(1, Math.sqrt(h)));
}

export function geoCellOf(position: GeoPoint, cellSizeM: number): GeoCell {
  const northM = position.lat * METERS_PER_DEGREE;
  const eastM = position.lon * METERS_PER_DEGREE * Math.cos((position.lat * Math.PI) / 180);
  return {
    row: Math.floor(northM / cellSizeM),
    col: Math.floor(eastM / cellSizeM),
    cellSizeM,
  };
}

export function timeBucketOf(timestampMs: number, bucketLenS: number): number {
  return Math.floor(timestampMs / (bucketLenS * 1000));
}

/** Deduplicated, (row, col)-sorted coarse cells covering the points. */
export function coarsenCells(points: TrailPoint[], cellSizeM: number): Array<[number, number]> {
  const seen = new Map<string, [number, number]>();
  for (const p of points) {
    const cell = geoCellOf(p.position, cellSizeM);
    seen.set(`${cell.row}:${cell.col}`, [cell.row, cell.col]);
  }
  return [...seen.values()].sort((a, b) => (a[0] - b[0]) || (a[1] - b[1]));
}
