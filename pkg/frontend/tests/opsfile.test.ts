/** Ops-file compatibility with the CLI: same records, same removal semantics. */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { dumpOpsFile, opToRecord, parseOpsFile } from "../src/opsfile.js";
import { applyRedactions } from "../src/redaction.js";
import { exportOpsFile, importOpsFile, loadTrail, toggleRedaction } from "../src/session.js";
import { ParseError, parseTrail } from "../src/trail.js";

const FIXTURES = join(__dirname, "..", "fixtures");
const opsText = readFileSync(join(FIXTURES, "case.ops.jsonl"), "utf8");
const trailText = readFileSync(join(FIXTURES, "commuter.trail.jsonl"), "utf8");
const expected: { kept_points: number; removed_per_op: number[] } = JSON.parse(
  readFileSync(join(FIXTURES, "expected_ops.json"), "utf8"),
);

describe("ops file compatibility", () => {
  it("applies a backend-written ops file with identical counts", () => {
    const ops = parseOpsFile(opsText, "case.ops.jsonl");
    expect(ops.map((op) => op.kind)).toEqual(["circle", "time_range", "cell"]);
    const trail = parseTrail(trailText, "commuter");
    const { kept, removedPerOp } = applyRedactions(trail.points, ops);
    expect(kept.length).toBe(expected.kept_points);
    expect(removedPerOp).toEqual(expected.removed_per_op);
  });

  it("re-serializes to the backend's exact records", () => {
    const ops = parseOpsFile(opsText);
    const theirs = opsText
      .split("\n")
      .filter((l) => l.trim())
      .map((l) => JSON.parse(l));
    expect(ops.map(opToRecord)).toEqual(theirs);
    expect(parseOpsFile(dumpOpsFile(ops))).toEqual(ops);
  });

  it("reports the failing line of a bad ops file", () => {
    const bad = opsText + '{"kind": "blur"}\n';
    const lines = bad.split("\n").filter((l) => l.trim()).length;
    try {
      parseOpsFile(bad, "case.ops.jsonl");
      expect.unreachable("should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(ParseError);
      expect((err as ParseError).lineNo).toBe(lines);
    }
  });

  it("round-trips through a session import/export", () => {
    let session = loadTrail(trailText, "commuter.trail.jsonl");
    // autos off: the imported manual ops alone must reproduce the backend count
    for (let i = 0; i < session.proposedOps.length; i++) session = toggleRedaction(session, i);
    session = importOpsFile(session, opsText, "case.ops.jsonl");
    expect(session.proposedOps.filter((p) => !p.auto).length).toBe(3);
    expect(session.preview.keptPoints.length).toBe(expected.kept_points);
    // autos back on for the export shape below
    for (let i = 0; i < 2; i++) session = toggleRedaction(session, i);
    const exported = exportOpsFile(session);
    // exported = auto proposals (circles) followed by the imported manual ops
    const records = exported
      .split("\n")
      .filter((l) => l.trim())
      .map((l) => JSON.parse(l));
    expect(records.slice(2)).toEqual(
      opsText
        .split("\n")
        .filter((l) => l.trim())
        .map((l) => JSON.parse(l)),
    );
  });
});
