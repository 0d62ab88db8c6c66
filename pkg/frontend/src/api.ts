/** Publication-service client: the console's only network surface. */

import type { PayloadRecord } from "./payload.js";

export class ServiceError extends Error {
  constructor(
    readonly code: string,
    detail: string,
  ) {
    super(detail ? `${code}: ${detail}` : code);
  }
}

async function serviceFetch(url: string, init: RequestInit): Promise<unknown> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ServiceError("NETWORK", (err as Error).message);
  }
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    // non-JSON error body: fall through to the status check
  }
  if (!response.ok) {
    const rec = body as { error?: string; detail?: string } | null;
    throw new ServiceError(rec?.error ?? `HTTP_${response.status}`, rec?.detail ?? "");
  }
  return body;
}

export async function publishPayload(
  serviceUrl: string,
  credential: string,
  record: PayloadRecord,
): Promise<number> {
  const body = (await serviceFetch(`${serviceUrl}/v1/payloads`, {
    method: "POST",
    headers: { "Content-Type": "application/json", "X-Authority-Token": credential },
    body: JSON.stringify(record),
  })) as { cursor: number };
  return body.cursor;
}

export interface UpdatePageBody {
  payloads: Array<{ cursor: number; record: PayloadRecord }>;
  next: number;
  snapshot_reset: boolean;
}

export async function getUpdates(
  serviceUrl: string,
  since: number,
  pageSize: number,
): Promise<UpdatePageBody> {
  return (await serviceFetch(`${serviceUrl}/v1/updates?since=${since}&page_size=${pageSize}`, {
    method: "GET",
  })) as UpdatePageBody;
}
