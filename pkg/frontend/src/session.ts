/**
 * The console's document model: one loaded carrier trail, a list of proposed
 * redaction ops (auto proposals pre-flagged, officials toggle or add), a live
 * preview of exactly what the public would see, and a single publish
 * transition guarded by an explicit confirmation.
 *
 * Everything except publish is local: the raw trail never crosses the network,
 * only the redacted derivation in the payload records does.
 */

import { getUpdates, publishPayload } from "./api.js";
import { TrailPoint } from "./geo.js";
import { dumpOpsFile, parseOpsFile } from "./opsfile.js";
import { buildPayloadRecords, canonicalJson, PayloadRecord } from "./payload.js";
import {
  applyRedactions,
  autoRedactionProposals,
  reidentificationRisk,
  RedactionOp,
  InvalidOp,
  validateOp,
} from "./redaction.js";
import { DEFAULT_GRID, GridParams, newSaltEpoch } from "./tokens.js";
import { coarsenCells } from "./geo.js";
import { tokenCount } from "./tokens.js";
import { LocationTrail, parseTrail } from "./trail.js";

export const COARSE_CELL_SIZE_M = 100;
export const DEFAULT_RISK_K = 5;

export interface ProposedOp {
  op: RedactionOp;
  enabled: boolean;
  auto: boolean;
}

export interface Preview {
  keptPoints: TrailPoint[];
  removedCount: number;
  coarseCells: Array<[number, number]>;
  tokenCount: number;
  riskScore: number;
}

export type PublishState =
  | { phase: "draft" }
  | { phase: "published"; cursors: number[]; serialization: string };

export interface ConsoleSession {
  trail: LocationTrail;
  proposedOps: ProposedOp[];
  background: LocationTrail[];
  grid: GridParams;
  riskK: number;
  preview: Preview;
  publishState: PublishState;
}

function computePreview(session: Omit<ConsoleSession, "preview" | "publishState">): Preview {
  const enabled = session.proposedOps.filter((p) => p.enabled).map((p) => p.op);
  const { kept } = applyRedactions(session.trail.points, enabled);
  return {
    keptPoints: kept,
    removedCount: session.trail.points.length - kept.length,
    coarseCells: coarsenCells(kept, COARSE_CELL_SIZE_M),
    tokenCount: tokenCount(kept, session.grid, true),
    riskScore: reidentificationRisk(kept, session.background, session.riskK, COARSE_CELL_SIZE_M),
  };
}

export function loadTrail(
  text: string,
  source = "<file>",
  options: { background?: LocationTrail[]; grid?: GridParams; riskK?: number } = {},
): ConsoleSession {
  const trail = parseTrail(text, source.split(".")[0] ?? "carrier", source);
  const base = {
    trail,
    proposedOps: autoRedactionProposals(trail).map((op) => ({ op, enabled: true, auto: true })),
    background: options.background ?? [],
    grid: options.grid ?? DEFAULT_GRID,
    riskK: options.riskK ?? DEFAULT_RISK_K,
  };
  return { ...base, preview: computePreview(base), publishState: { phase: "draft" } };
}

function assertDraft(session: ConsoleSession): void {
  if (session.publishState.phase !== "draft") {
    throw new InvalidOp("session is no longer a draft");
  }
}

export function toggleRedaction(session: ConsoleSession, opIndex: number): ConsoleSession {
  assertDraft(session);
  const existing = session.proposedOps[opIndex];
  if (!existing) throw new InvalidOp(`no redaction at index ${opIndex}`);
  const proposedOps = session.proposedOps.map((p, i) =>
    i === opIndex ? { ...p, enabled: !p.enabled } : p,
  );
  const next = { ...session, proposedOps };
  return { ...next, preview: computePreview(next) };
}

export function addRedaction(session: ConsoleSession, op: RedactionOp): ConsoleSession {
  assertDraft(session);
  validateOp(op);
  const next = { ...session, proposedOps: [...session.proposedOps, { op, enabled: true, auto: false }] };
  return { ...next, preview: computePreview(next) };
}

/** Import a CLI-format ops file; each op arrives enabled, marked manual. */
export function importOpsFile(session: ConsoleSession, text: string, source = "<ops>"): ConsoleSession {
  assertDraft(session);
  let next = session;
  for (const op of parseOpsFile(text, source)) {
    next = addRedaction(next, op);
  }
  return next;
}

/** The currently-enabled ops in the CLI's ops-file format. */
export function exportOpsFile(session: ConsoleSession): string {
  return dumpOpsFile(session.proposedOps.filter((p) => p.enabled).map((p) => p.op));
}

export interface PublishOptions {
  confirmed: boolean;
  epoch?: number;
  salt?: Uint8Array;
  publishedAtMs?: number;
}

/** The two payload records the current preview would publish, plus their
 * canonical serialization — computed before anything touches the network so
 * what-you-see-is-what-you-publish is checkable. */
export async function previewRecords(
  session: ConsoleSession,
  options: PublishOptions,
): Promise<{ records: [PayloadRecord, PayloadRecord]; serialization: string }> {
  const keptSerialized = session.preview.keptPoints
    .map((p) => JSON.stringify({ lat: p.position.lat, lon: p.position.lon, ts: p.timestampMs }))
    .join("\n")
    .concat("\n");
  const records = await buildPayloadRecords(
    session.preview.keptPoints,
    keptSerialized,
    options.epoch ?? 0,
    options.salt ?? newSaltEpoch(),
    session.grid,
    options.publishedAtMs ?? Date.now(),
  );
  return { records, serialization: canonicalJson(records) };
}

/**
 * Build both payload tiers from the current preview and POST them. Service
 * errors (AUTH_FAILED, RETENTION_VIOLATION, NETWORK) propagate verbatim and
 * the caller keeps its draft session.
 */
export async function publishSession(
  session: ConsoleSession,
  serviceUrl: string,
  credential: string,
  options: PublishOptions,
): Promise<ConsoleSession> {
  if (session.publishState.phase !== "draft") {
    return session; // already published: nothing further to send
  }
  if (!options.confirmed) {
    throw new InvalidOp("publish requires the explicit confirmation step");
  }
  if (!session.preview.keptPoints.length) {
    throw new InvalidOp("nothing to publish: the preview is empty");
  }
  const { records, serialization } = await previewRecords(session, options);
  const cursors: number[] = [];
  for (const record of records) {
    cursors.push(await publishPayload(serviceUrl, credential, record));
  }
  return {
    ...session,
    publishState: { phase: "published", cursors, serialization },
  };
}

/**
 * Idempotent publish guard for the UI: while one publish is in flight, or
 * after one has succeeded, further clicks never produce a second request.
 * A failed publish clears the guard so the official can retry.
 */
export class PublishGuard {
  private inFlight: Promise<ConsoleSession> | null = null;
  private published: ConsoleSession | null = null;

  run(
    session: ConsoleSession,
    serviceUrl: string,
    credential: string,
    options: PublishOptions,
  ): Promise<ConsoleSession> {
    if (this.published) return Promise.resolve(this.published);
    if (this.inFlight) return this.inFlight;
    this.inFlight = publishSession(session, serviceUrl, credential, options)
      .then((published) => {
        this.published = published;
        return published;
      })
      .finally(() => {
        this.inFlight = null;
      });
    return this.inFlight;
  }
}

export function publishedRecords(session: ConsoleSession): PayloadRecord[] {
  if (session.publishState.phase !== "published") return [];
  return JSON.parse(session.publishState.serialization) as PayloadRecord[];
}

/** Convenience used by the round-trip test and the UI's verify button. */
export async function fetchAllRecords(serviceUrl: string): Promise<PayloadRecord[]> {
  const records: PayloadRecord[] = [];
  let since = 0;
  for (;;) {
    const page = await getUpdates(serviceUrl, since, 100);
    for (const entry of page.payloads) records.push(entry.record);
    if (page.next === since) break;
    since = page.next;
  }
  return records;
}
