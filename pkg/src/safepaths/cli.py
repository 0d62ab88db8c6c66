"""Command-line entry point: every workflow behind one `safepaths` binary.

Subcommands are thin shells over the library modules; no domain computation
lives here. Exit codes: 0 success, 1 domain error (message on stderr), 2 usage
error. The authority credential is taken from SAFEPATHS_AUTHORITY_TOKEN, never
from a flag, so it cannot leak into process listings.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import client as client_mod
from . import epi
from .matching import (
    MatchParams,
    brute_force_exposures,
    hash_tokens,
    indexed_exposures,
    match_tokens,
    read_token_file,
    write_token_file,
)
from .publication import PublicationError
from .redaction import (
    DwellPolicy,
    apply_manual_redactions,
    auto_redact,
    load_redaction_ops,
    reidentification_risk,
    save_redaction_log,
)
from .server import serve_from_config
from .synth import random_walk_points
from .trail import (
    GeoPoint,
    RetentionPolicy,
    TrailParseError,
    TrailPoint,
    load_trail,
    save_trail,
)

AUTHORITY_TOKEN_ENV = "SAFEPATHS_AUTHORITY_TOKEN"


class DomainError(Exception):
    pass


def _match_params(args) -> MatchParams:
    return MatchParams(
        d_max_m=args.d_max,
        dt_max_s=args.dt_max,
        cell_size_m=args.cell_size,
        bucket_len_s=args.bucket_len,
    )


def _add_match_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--d-max", type=float, default=10.0, help="contact distance threshold, meters")
    parser.add_argument("--dt-max", type=float, default=300.0, help="contact time threshold, seconds")
    parser.add_argument("--cell-size", type=float, default=10.0, help="matching grid cell size, meters")
    parser.add_argument("--bucket-len", type=int, default=300, help="matching time bucket, seconds")


def _load_carriers(path: Path) -> list[tuple[str, "object"]]:
    if path.is_dir():
        files = sorted(path.glob("*.trail.jsonl"))
    else:
        files = [path]
    if not files:
        raise DomainError(f"no carrier trails under {path}")
    return [(f.name.split(".")[0], load_trail(f)) for f in files]


def _print_events(events) -> None:
    for e in events:
        sys.stdout.write(
            json.dumps(
                {
                    "ts": e.user_point.timestamp_ms,
                    "lat": e.user_point.position.lat,
                    "lon": e.user_point.position.lon,
                    "carrier": e.carrier_trail_id,
                    "distance_m": round(e.distance_m, 6),
                    "time_gap_s": e.time_gap_s,
                }
            )
            + "\n"
        )


# --- command handlers -----------------------------------------------------------


def cmd_serve(args) -> int:
    server = serve_from_config(args.config, extra_credential=os.environ.get(AUTHORITY_TOKEN_ENV))
    host, port = server.address
    print(f"publication service listening on http://{host}:{port}", file=sys.stderr)
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_client_log(args) -> int:
    c = client_mod.SafePathsClient(
        args.state, retention=RetentionPolicy(retention_days=args.retention_days)
    )
    if args.replay:
        points = load_trail(args.replay).points
    elif args.walk:
        if args.lat is None or args.lon is None:
            raise DomainError("--walk needs --lat/--lon for the starting position")
        points = list(
            random_walk_points(
                seed=args.seed,
                start=GeoPoint(lat=args.lat, lon=args.lon),
                start_ms=args.ts if args.ts is not None else 0,
                step_s=args.step_s,
                count=args.walk,
            )
        )
    else:
        if args.lat is None or args.lon is None or args.ts is None:
            raise DomainError("provide --lat/--lon/--ts, or --replay, or --walk")
        points = [TrailPoint(position=GeoPoint(lat=args.lat, lon=args.lon), timestamp_ms=args.ts)]
    for p in points:
        c.log(p)
    print(f"logged {len(points)} point(s); trail now {len(c.state.trail)} point(s)", file=sys.stderr)
    return 0


def cmd_client_sync(args) -> int:
    c = client_mod.SafePathsClient(
        args.state,
        transport=client_mod.HttpTransport(args.server),
        params=_match_params(args),
        retention=RetentionPolicy(retention_days=args.retention_days),
    )
    report = c.sync(now_ms=args.now, page_size=args.page_size)
    sys.stdout.write(json.dumps(report.to_record(), sort_keys=True) + "\n")
    return 0


def cmd_client_report(args) -> int:
    c = client_mod.SafePathsClient(
        args.state,
        params=_match_params(args),
        retention=RetentionPolicy(retention_days=args.retention_days),
    )
    report = c.report(now_ms=args.now)
    sys.stdout.write(json.dumps(report.to_record(), sort_keys=True) + "\n")
    return 0


def cmd_client_export(args) -> int:
    c = client_mod.SafePathsClient(
        args.state, retention=RetentionPolicy(retention_days=args.retention_days)
    )
    if args.grant_consent:
        c.set_consent(True)
    if args.revoke_consent:
        c.set_consent(False)
    trail = c.export(now_ms=args.now)
    save_trail(trail, args.out)
    print(f"exported {len(trail)} point(s) to {args.out}", file=sys.stderr)
    return 0


def cmd_redact_auto(args) -> int:
    trail = load_trail(args.infile)
    policy = DwellPolicy(
        dwell_radius_m=args.radius,
        min_dwell_s=args.min_dwell,
        top_k_clusters=args.top_k,
    )
    redacted = auto_redact(trail, policy)
    save_trail(redacted.kept, args.out)
    save_redaction_log(redacted, args.log)
    print(
        f"kept {len(redacted.kept)} of {len(trail)} points "
        f"({redacted.removed_count} removed across {len(redacted.redaction_log)} ops)",
        file=sys.stderr,
    )
    return 0


def cmd_redact_apply(args) -> int:
    trail = load_trail(args.infile)
    ops = load_redaction_ops(args.ops)
    redacted = apply_manual_redactions(trail, ops)
    save_trail(redacted.kept, args.out)
    save_redaction_log(redacted, args.log)
    print(f"kept {len(redacted.kept)} of {len(trail)} points", file=sys.stderr)
    return 0


def cmd_redact_risk(args) -> int:
    trail = load_trail(args.infile)
    redacted = apply_manual_redactions(trail, [])
    background = [load_trail(p) for p in sorted(Path(args.background).glob("*.trail.jsonl"))]
    score = reidentification_risk(redacted, background, k=args.k, cell_size_m=args.cell_size)
    sys.stdout.write(json.dumps({"risk": score, "k": args.k, "cell_size_m": args.cell_size}) + "\n")
    return 0


def cmd_match(args) -> int:
    params = _match_params(args)
    user = load_trail(args.user)
    carriers = _load_carriers(Path(args.carriers))
    fn = brute_force_exposures if args.mode == "oracle" else indexed_exposures
    _print_events(fn(user, carriers, params))
    return 0


def cmd_match_tokens(args) -> int:
    params = _match_params(args)
    if args.intersect:
        salt_a, tokens_a = read_token_file(args.intersect[0])
        salt_b, tokens_b = read_token_file(args.intersect[1])
        if salt_a != salt_b:
            raise DomainError("token files use different salt epochs")
        hits = match_tokens(tokens_a, tokens_b)
        sys.stdout.write(json.dumps({"matches": len(hits), "digests": sorted(t.hex() for t in hits)}) + "\n")
        return 0
    if not args.trail or not args.out or not args.salt_hex:
        raise DomainError("provide --trail/--salt-hex/--out, or --intersect A B")
    salt = bytes.fromhex(args.salt_hex)
    tokens = hash_tokens(load_trail(args.trail), params, salt, expand_neighbors=args.expand)
    write_token_file(args.out, salt, tokens)
    print(f"wrote {len(tokens)} token(s) to {args.out}", file=sys.stderr)
    return 0


def _abm_config(args) -> epi.AbmConfig:
    return epi.AbmConfig(
        n_agents=args.agents,
        steps=args.steps,
        initial_infected=args.initial_infected,
        rng_seed=args.seed,
    )


def _epi_params(args, x: float | None = None) -> epi.EpiParams:
    return epi.EpiParams(
        r0=args.r0,
        adoption_x=args.x if x is None else x,
        compliance_q=args.q,
        preventable_theta=args.theta,
    )


def _outcome_record(outcome: epi.SimOutcome) -> dict:
    return {
        "attack_rate": outcome.attack_rate,
        "empirical_r": outcome.empirical_r,
        "notification_recall": outcome.notification_recall,
        "notification_precision": outcome.notification_precision,
        "user_points_to_central": outcome.leakage.user_points_to_central,
        "carrier_points_public": outcome.leakage.carrier_points_public,
        "identities_revealed": outcome.leakage.identities_revealed,
    }


def cmd_sim_run(args) -> int:
    outcome = epi.run_abm(_abm_config(args), _epi_params(args), epi.strategy_profile(args.strategy))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"strategy": args.strategy, "x": args.x, "seed": args.seed, **_outcome_record(outcome)}
    (out_dir / "run.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    return 0


def cmd_sim_sweep(args) -> int:
    xs = [float(v) for v in args.x_list.split(",") if v != ""]
    cfg = _abm_config(args)
    rows = epi.adoption_sweep(cfg, _epi_params(args, x=0.0), epi.strategy_profile(args.strategy), xs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [
        {"x": r.x, "formula_r": r.formula_r, "seed": args.seed, **_outcome_record(r.outcome)}
        for r in rows
    ]
    lines = ["x\tformula_r\tempirical_r\tattack_rate"]
    lines += [f"{r['x']:.4f}\t{r['formula_r']:.6f}\t{r['empirical_r']:.6f}\t{r['attack_rate']:.6f}" for r in records]
    (out_dir / "sweep.tsv").write_text("\n".join(lines) + "\n")
    (out_dir / "sweep.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_sim_compare(args) -> int:
    report = epi.compare_strategies(_abm_config(args), _epi_params(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "strategies.tsv").write_text(report.to_tsv())
    (out_dir / "strategies.jsonl").write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in report.to_records())
    )
    sys.stdout.write(report.to_tsv())
    return 0


# --- parser wiring ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safepaths", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the publication service")
    p_serve.add_argument("--config", required=True, help="JSON config: listen, retention_days, credentials")
    p_serve.set_defaults(fn=cmd_serve)

    p_client = sub.add_parser("client", help="drive the user-side agent")
    client_sub = p_client.add_subparsers(dest="client_command", required=True)

    def client_common(p):
        p.add_argument("--state", required=True, help="client state directory")
        p.add_argument("--retention-days", type=int, default=37)
        p.add_argument("--now", type=int, default=None, help="override wall clock, unix ms")

    p_log = client_sub.add_parser("log", help="append own location fixes")
    client_common(p_log)
    p_log.add_argument("--lat", type=float)
    p_log.add_argument("--lon", type=float)
    p_log.add_argument("--ts", type=int)
    p_log.add_argument("--replay", help="append every point from a .trail.jsonl file")
    p_log.add_argument("--walk", type=int, help="append N synthetic random-walk points")
    p_log.add_argument("--seed", type=int, default=0)
    p_log.add_argument("--step-s", type=int, default=300)
    p_log.set_defaults(fn=cmd_client_log)

    p_sync = client_sub.add_parser("sync", help="pull carrier payloads and match locally")
    client_common(p_sync)
    p_sync.add_argument("--server", required=True, help="publication service base URL")
    p_sync.add_argument("--page-size", type=int, default=100)
    _add_match_flags(p_sync)
    p_sync.set_defaults(fn=cmd_client_sync)

    p_report = client_sub.add_parser("report", help="re-match cached payloads offline")
    client_common(p_report)
    _add_match_flags(p_report)
    p_report.set_defaults(fn=cmd_client_report)

    p_export = client_sub.add_parser("export", help="consent-gated trail export for an authority")
    client_common(p_export)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--grant-consent", action="store_true", help="record consent, then export")
    p_export.add_argument("--revoke-consent", action="store_true")
    p_export.set_defaults(fn=cmd_client_export)

    p_redact = sub.add_parser("redact", help="carrier trail redaction tools")
    redact_sub = p_redact.add_subparsers(dest="redact_command", required=True)

    p_auto = redact_sub.add_parser("auto", help="remove dwell anchors (home/work)")
    p_auto.add_argument("--in", dest="infile", required=True)
    p_auto.add_argument("--out", required=True)
    p_auto.add_argument("--log", required=True)
    p_auto.add_argument("--radius", type=float, default=50.0)
    p_auto.add_argument("--min-dwell", type=float, default=45 * 60)
    p_auto.add_argument("--top-k", type=int, default=2)
    p_auto.set_defaults(fn=cmd_redact_auto)

    p_apply = redact_sub.add_parser("apply", help="apply manual redaction ops")
    p_apply.add_argument("--in", dest="infile", required=True)
    p_apply.add_argument("--ops", required=True)
    p_apply.add_argument("--out", required=True)
    p_apply.add_argument("--log", required=True)
    p_apply.set_defaults(fn=cmd_redact_apply)

    p_risk = redact_sub.add_parser("risk", help="re-identification risk vs a background set")
    p_risk.add_argument("--in", dest="infile", required=True)
    p_risk.add_argument("--background", required=True, help="directory of .trail.jsonl files")
    p_risk.add_argument("--k", type=int, default=5)
    p_risk.add_argument("--cell-size", type=float, default=100.0)
    p_risk.set_defaults(fn=cmd_redact_risk)

    p_match = sub.add_parser("match", help="exposure matching")
    match_sub = p_match.add_subparsers(dest="match_command", required=True)

    for mode in ("oracle", "indexed"):
        p_m = match_sub.add_parser(mode, help=f"{mode} exposure match")
        p_m.add_argument("--user", required=True)
        p_m.add_argument("--carriers", required=True, help="carrier trail file or directory")
        _add_match_flags(p_m)
        p_m.set_defaults(fn=cmd_match, mode=mode)

    p_tok = match_sub.add_parser("tokens", help="build or intersect token files")
    p_tok.add_argument("--trail")
    p_tok.add_argument("--salt-hex")
    p_tok.add_argument("--out")
    p_tok.add_argument("--expand", action="store_true", help="carrier-side neighbor expansion")
    p_tok.add_argument("--intersect", nargs=2, metavar=("A", "B"))
    _add_match_flags(p_tok)
    p_tok.set_defaults(fn=cmd_match_tokens)

    p_sim = sub.add_parser("sim", help="epidemic strategy simulations")
    sim_sub = p_sim.add_subparsers(dest="sim_command", required=True)

    def sim_common(p, adoption_flag=True):
        p.add_argument("--agents", type=int, default=10_000)
        p.add_argument("--steps", type=int, default=32)
        p.add_argument("--initial-infected", type=int, default=60)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--r0", type=float, default=2.5)
        if adoption_flag:
            p.add_argument("--x", type=float, default=0.6, help="app adoption fraction")
        p.add_argument("--q", type=float, default=1.0, help="isolation compliance")
        p.add_argument("--theta", type=float, default=0.8, help="preventable transmission share")
        p.add_argument("--out", required=True)

    p_run = sim_sub.add_parser("run", help="single strategy run")
    sim_common(p_run)
    p_run.add_argument("--strategy", choices=epi.STRATEGY_KINDS, default="safepaths")
    p_run.set_defaults(fn=cmd_sim_run)

    p_sweep = sim_sub.add_parser("sweep", help="adoption-fraction sweep")
    sim_common(p_sweep, adoption_flag=False)
    p_sweep.add_argument("--x", dest="x_list", default="0,0.25,0.5,0.75,1", help="comma-separated adoption fractions")
    p_sweep.add_argument("--strategy", choices=epi.STRATEGY_KINDS, default="unicast")
    p_sweep.set_defaults(fn=cmd_sim_sweep)

    p_cmp = sim_sub.add_parser("compare", help="all strategies, shared seed")
    sim_common(p_cmp)
    p_cmp.set_defaults(fn=cmd_sim_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "now", None) is None and hasattr(args, "now"):
        import time

        args.now = int(time.time() * 1000)
    try:
        return args.fn(args)
    except (
        DomainError,
        TrailParseError,
        PublicationError,
        client_mod.ClientError,
        epi.ConfigInvalid,
        epi.OrderingViolation,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
