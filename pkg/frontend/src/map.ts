/**
 * Offline map: a plain canvas with a local equirectangular projection and a
 * grid overlay. No tile service is ever contacted — trail coordinates stay in
 * the browser, which is the point.
 */

import { GeoPoint, METERS_PER_DEGREE, TrailPoint } from "./geo.js";
import type { ProposedOp } from "./session.js";

export interface Viewport {
  centerLat: number;
  centerLon: number;
  metersPerPixel: number;
  width: number;
  height: number;
}

export function fitBounds(points: TrailPoint[], width: number, height: number): Viewport {
  if (!points.length) {
    return { centerLat: 0, centerLon: 0, metersPerPixel: 1, width, height };
  }
  let minLat = Infinity;
  let maxLat = -Infinity;
  let minLon = Infinity;
  let maxLon = -Infinity;
  for (const p of points) {
    minLat = Math.min(minLat, p.position.lat);
    maxLat = Math.max(maxLat, p.position.lat);
    minLon = Math.min(minLon, p.position.lon);
    maxLon = Math.max(maxLon, p.position.lon);
  }
  const centerLat = (minLat + maxLat) / 2;
  const centerLon = (minLon + maxLon) / 2;
  const cosLat = Math.cos((centerLat * Math.PI) / 180);
  const spanNorthM = (maxLat - minLat) * METERS_PER_DEGREE;
  const spanEastM = (maxLon - minLon) * METERS_PER_DEGREE * cosLat;
  const metersPerPixel = Math.max(
    spanNorthM / Math.max(1, height - 40),
    spanEastM / Math.max(1, width - 40),
    0.05,
  );
  return { centerLat, centerLon, metersPerPixel, width, height };
}

export function project(view: Viewport, point: GeoPoint): [number, number] {
  const cosLat = Math.cos((view.centerLat * Math.PI) / 180);
  const dxM = (point.lon - view.centerLon) * METERS_PER_DEGREE * cosLat;
  const dyM = (point.lat - view.centerLat) * METERS_PER_DEGREE;
  return [view.width / 2 + dxM / view.metersPerPixel, view.height / 2 - dyM / view.metersPerPixel];
}

export function unproject(view: Viewport, x: number, y: number): GeoPoint {
  const cosLat = Math.cos((view.centerLat * Math.PI) / 180);
  const dxM = (x - view.width / 2) * view.metersPerPixel;
  const dyM = (view.height / 2 - y) * view.metersPerPixel;
  return {
    lat: view.centerLat + dyM / METERS_PER_DEGREE,
    lon: view.centerLon + dxM / (METERS_PER_DEGREE * cosLat),
  };
}

export function drawMap(
  ctx: CanvasRenderingContext2D,
  view: Viewport,
  trail: TrailPoint[],
  keptPoints: TrailPoint[],
  proposals: ProposedOp[],
): void {
  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, view.width, view.height);

  // 100 m grid so officials can see the broadcast-tier resolution
  const gridPx = 100 / view.metersPerPixel;
  if (gridPx > 8) {
    ctx.strokeStyle = "#1d2430";
    ctx.lineWidth = 1;
    for (let x = (view.width / 2) % gridPx; x < view.width; x += gridPx) {
      ctx.beginPath();
      ctx.moveTo(x, 0);
      ctx.lineTo(x, view.height);
      ctx.stroke();
    }
    for (let y = (view.height / 2) % gridPx; y < view.height; y += gridPx) {
      ctx.beginPath();
      ctx.moveTo(0, y);
      ctx.lineTo(view.width, y);
      ctx.stroke();
    }
  }

  const kept = new Set(keptPoints.map((p) => p.timestampMs));

  // full trail, color-coded by fate: removed points dim red, kept points green
  for (const p of trail) {
    const [x, y] = project(view, p.position);
    ctx.fillStyle = kept.has(p.timestampMs) ? "#4cc38a" : "#b54548";
    ctx.globalAlpha = kept.has(p.timestampMs) ? 0.9 : 0.45;
    ctx.beginPath();
    ctx.arc(x, y, 2.2, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.globalAlpha = 1;

  for (const proposal of proposals) {
    if (proposal.op.kind !== "circle") continue;
    const [x, y] = project(view, { lat: proposal.op.lat, lon: proposal.op.lon });
    const radiusPx = proposal.op.radiusM / view.metersPerPixel;
    ctx.strokeStyle = proposal.enabled ? "#e5484d" : "#5a6169";
    ctx.setLineDash(proposal.enabled ? [] : [6, 4]);
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(x, y, radiusPx, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.setLineDash([]);
  }
}
