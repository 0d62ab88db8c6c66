"""Regenerate the console's conformance fixtures from the backend.

Run from the repository root after `pip install -e .`:

    python3 frontend/scripts/generate_fixtures.py

The TypeScript tests assert cell lists, token counts, digests, and risk scores
against these files, which is what keeps the console bit-compatible with the
CLI across both tiers.
"""

import json
import random
from pathlib import Path

from safepaths.matching import MatchParams, hash_tokens, space_time_token
from safepaths.redaction import (
    CellRedaction,
    CircleRedaction,
    DwellPolicy,
    TimeRangeRedaction,
    apply_manual_redactions,
    auto_redact,
    detect_dwell_clusters,
    redaction_op_to_record,
    reidentification_risk,
)
from safepaths.synth import make_commuter_trail, offset_point, random_trail
from safepaths.trail import coarsen, geo_cell_of, save_trail

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
SALT = bytes.fromhex("00112233445566778899aabbccddeeff")
RISK_K = 5


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    (FIXTURES / "background").mkdir(exist_ok=True)

    fixture = make_commuter_trail(seed=42, days=2)
    save_trail(fixture.trail, FIXTURES / "commuter.trail.jsonl")

    rng = random.Random(1234)
    background = []
    for i in range(6):
        anchor = offset_point(fixture.home, rng.uniform(-800, 800), rng.uniform(-800, 800))
        bg = random_trail(rng, f"bg{i}", anchor, 40, spread_m=600)
        background.append(bg)
        save_trail(bg, FIXTURES / "background" / f"bg{i}.trail.jsonl")

    clusters = detect_dwell_clusters(fixture.trail, radius_m=50.0, min_duration_s=45 * 60)
    redacted = auto_redact(fixture.trail, DwellPolicy())
    kept = redacted.kept
    grid = MatchParams()

    expected = {
        "trail_points": len(fixture.trail),
        "proposals": [
            {
                "lat": c.centroid.lat,
                "lon": c.centroid.lon,
                "radius_m": 50.0,
                "total_dwell_s": c.total_dwell_s,
                "visit_count": c.visit_count,
            }
            for c in clusters[:2]
        ],
        "preview_with_proposals": {
            "kept_points": len(kept),
            "coarse_cells": [[c.row, c.col] for c in coarsen(kept, 100.0)],
            "token_count": len(hash_tokens(kept, grid, SALT, expand_neighbors=True)),
            "risk_score": reidentification_risk(redacted, background, RISK_K, 100.0),
        },
        "raw_coarse_cells": [[c.row, c.col] for c in coarsen(fixture.trail, 100.0)],
        "salt_hex": SALT.hex(),
        "token_digests": [
            {
                "row": row,
                "col": col,
                "bucket": bucket,
                "hex": space_time_token(SALT, row, col, bucket).hex(),
            }
            for row, col, bucket in [(0, 0, 0), (52998, -136233, 4321), (-7, -9, 123456789)]
        ],
    }
    (FIXTURES / "expected.json").write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n")

    # a CLI-format ops file plus the removal counts it produces on the fixture
    first_ts = fixture.trail.points[0].timestamp_ms
    manual_ops = [
        CircleRedaction(
            center=offset_point(fixture.work, 40.0, -25.0),
            radius_m=120.0,
            reason="business consulted",
        ),
        TimeRangeRedaction(start_ms=first_ts, end_ms=first_ts + 2 * 3_600_000, reason="clinic"),
        CellRedaction(cell=geo_cell_of(fixture.home, 50.0), reason="anchor cell"),
    ]
    (FIXTURES / "case.ops.jsonl").write_text(
        "".join(json.dumps(redaction_op_to_record(op)) + "\n" for op in manual_ops)
    )
    applied = apply_manual_redactions(fixture.trail, manual_ops)
    (FIXTURES / "expected_ops.json").write_text(
        json.dumps(
            {
                "kept_points": len(applied.kept),
                "removed_per_op": [n for _, n in applied.redaction_log],
            },
            sort_keys=True,
        )
        + "\n"
    )
    print(f"wrote fixtures for {len(fixture.trail)} trail points, {len(kept)} kept")


if __name__ == "__main__":
    main()
