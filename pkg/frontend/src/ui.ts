/** Wires the session document model to the DOM. Single official, single session. */

import { drawMap, fitBounds, unproject, Viewport } from "./map.js";
import {
  addRedaction,
  ConsoleSession,
  exportOpsFile,
  importOpsFile,
  loadTrail,
  PublishGuard,
  toggleRedaction,
} from "./session.js";
import { ServiceError } from "./api.js";
import { ParseError } from "./trail.js";

let session: ConsoleSession | null = null;
let guard = new PublishGuard();
let view: Viewport | null = null;

const $ = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T;

function banner(kind: "info" | "error" | "ok", text: string): void {
  const el = $("banner");
  el.className = `banner ${kind}`;
  el.textContent = text;
}

function render(): void {
  const canvas = $<HTMLCanvasElement>("map");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  if (!session) {
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    return;
  }
  view = fitBounds(session.trail.points, canvas.width, canvas.height);
  drawMap(ctx, view, session.trail.points, session.preview.keptPoints, session.proposedOps);

  const ops = $("ops");
  ops.innerHTML = "";
  session.proposedOps.forEach((proposal, index) => {
    const li = document.createElement("li");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = proposal.enabled;
    box.disabled = session!.publishState.phase !== "draft";
    box.addEventListener("change", () => {
      session = toggleRedaction(session!, index);
      render();
    });
    const label = document.createElement("label");
    const describe =
      proposal.op.kind === "circle"
        ? `circle r=${proposal.op.radiusM.toFixed(0)} m`
        : proposal.op.kind === "time_range"
          ? `time [${proposal.op.startMs}, ${proposal.op.endMs})`
          : `cell (${proposal.op.row}, ${proposal.op.col})`;
    label.textContent = ` ${describe} — ${proposal.op.reason || "(manual)"}${proposal.auto ? " [auto]" : ""}`;
    li.append(box, label);
    ops.append(li);
  });

  const preview = session.preview;
  $("preview").textContent =
    `${preview.keptPoints.length} points kept (${preview.removedCount} redacted) | ` +
    `${preview.coarseCells.length} public 100 m cells | ${preview.tokenCount} tokens | ` +
    `re-identification risk ${preview.riskScore.toFixed(2)}`;

  const published = session.publishState.phase === "published";
  $("publish").toggleAttribute("disabled", published);
  if (published && session.publishState.phase === "published") {
    banner("ok", `published (cursors ${session.publishState.cursors.join(", ")})`);
  }
}

export function boot(): void {
  $("file").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      session = loadTrail(await file.text(), file.name);
      guard = new PublishGuard();
      banner(
        "info",
        `loaded ${session.trail.points.length} points; ` +
          `${session.proposedOps.length} dwell anchors pre-flagged`,
      );
    } catch (err) {
      if (err instanceof ParseError) banner("error", err.message);
      else banner("error", String(err));
      session = null;
    }
    render();
  });

  $("ops-file").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file || !session) return;
    try {
      session = importOpsFile(session, await file.text(), file.name);
      banner("info", `imported redaction ops from ${file.name}`);
    } catch (err) {
      banner("error", String(err));
    }
    render();
  });

  $("ops-export").addEventListener("click", () => {
    if (!session) return;
    const blob = new Blob([exportOpsFile(session)], { type: "application/jsonl" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "case.ops.jsonl";
    link.click();
    URL.revokeObjectURL(link.href);
  });

  $<HTMLCanvasElement>("map").addEventListener("click", (event) => {
    if (!session || !view || session.publishState.phase !== "draft") return;
    if (!$<HTMLInputElement>("add-circle").checked) return;
    const rect = (event.target as HTMLCanvasElement).getBoundingClientRect();
    const where = unproject(view, event.clientX - rect.left, event.clientY - rect.top);
    const radiusM = Number($<HTMLInputElement>("circle-radius").value) || 50;
    session = addRedaction(session, {
      kind: "circle",
      lat: where.lat,
      lon: where.lon,
      radiusM,
      reason: "official judgment",
    });
    render();
  });

  $("publish").addEventListener("click", async () => {
    if (!session) return;
    const confirmed = $<HTMLInputElement>("confirm").checked;
    const serviceUrl = $<HTMLInputElement>("service-url").value.replace(/\/$/, "");
    const credential = $<HTMLInputElement>("credential").value;
    try {
      session = await guard.run(session, serviceUrl, credential, { confirmed });
      render();
    } catch (err) {
      if (err instanceof ServiceError) banner("error", err.message);
      else banner("error", String(err));
    }
  });

  render();
}

if (typeof document !== "undefined" && document.getElementById("map")) {
  boot();
}
