import json
import os
import signal
import subprocess
import sys
import time
import urllib.request

from safepaths.matching import read_token_file
from safepaths.synth import make_commuter_trail, offset_point, random_trail
from safepaths.trail import GeoPoint, TrailPoint, LocationTrail, load_trail, save_trail

MS_PER_DAY = 86_400_000
BASE = GeoPoint(lat=41.39, lon=2.17)


def run_cli(*args, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "safepaths.cli", *args],
        capture_output=True,
        text=True,
        env=full_env,
        timeout=120,
    )


def test_usage_error_exits_2():
    assert run_cli().returncode == 2
    assert run_cli("redact").returncode == 2
    assert run_cli("frobnicate").returncode == 2


def test_redact_auto_partition_between_files(tmp_path):
    fixture = make_commuter_trail(seed=4)
    src = tmp_path / "a.trail.jsonl"
    save_trail(fixture.trail, src)
    out = tmp_path / "a.redacted.jsonl"
    log = tmp_path / "a.redactions.jsonl"
    proc = run_cli("redact", "auto", "--in", str(src), "--out", str(out), "--log", str(log))
    assert proc.returncode == 0
    kept = load_trail(out)
    removed = sum(json.loads(l)["removed"] for l in log.read_text().splitlines() if l)
    assert len(kept) + removed == len(fixture.trail)
    assert removed > 0


def test_redact_apply_and_risk(tmp_path):
    import random

    trail = random_trail(random.Random(1), "case", BASE, 30, spread_m=300)
    src = tmp_path / "case.trail.jsonl"
    save_trail(trail, src)
    ops = tmp_path / "case.ops.jsonl"
    mid = trail.points[len(trail) // 2]
    ops.write_text(
        json.dumps(
            {
                "kind": "circle",
                "lat": mid.position.lat,
                "lon": mid.position.lon,
                "radius_m": 120.0,
                "reason": "sensitive site",
            }
        )
        + "\n"
    )
    out = tmp_path / "case.redacted.jsonl"
    log = tmp_path / "case.log.jsonl"
    assert run_cli("redact", "apply", "--in", str(src), "--ops", str(ops), "--out", str(out), "--log", str(log)).returncode == 0
    kept = load_trail(out)
    assert len(kept) < len(trail)

    bg_dir = tmp_path / "bg"
    bg_dir.mkdir()
    for i in range(3):
        save_trail(random_trail(random.Random(100 + i), f"bg{i}", BASE, 20, spread_m=300), bg_dir / f"bg{i}.trail.jsonl")
    proc = run_cli("redact", "risk", "--in", str(out), "--background", str(bg_dir), "--k", "2")
    assert proc.returncode == 0
    risk = json.loads(proc.stdout)
    assert 0.0 <= risk["risk"] <= 1.0


def test_match_oracle_and_indexed_byte_identical(tmp_path):
    import random

    rng = random.Random(6)
    user = random_trail(rng, "user", BASE, 60, spread_m=40)
    carriers_dir = tmp_path / "carriers"
    carriers_dir.mkdir()
    for i in range(3):
        save_trail(random_trail(rng, f"c{i}", BASE, 40, spread_m=40), carriers_dir / f"c{i}.trail.jsonl")
    user_path = tmp_path / "u.trail.jsonl"
    save_trail(user, user_path)

    def run_mode(mode):
        proc = run_cli(
            "match", mode, "--user", str(user_path), "--carriers", str(carriers_dir),
            "--d-max", "10", "--dt-max", "300",
        )
        assert proc.returncode == 0
        return proc.stdout

    oracle_out = run_mode("oracle")
    assert oracle_out.strip(), "fixture should produce at least one event"
    assert run_mode("indexed") == oracle_out


def test_match_tokens_build_and_intersect(tmp_path):
    import random

    rng = random.Random(7)
    carrier = random_trail(rng, "carrier", BASE, 20, spread_m=30)
    user = LocationTrail(
        owner_id="user",
        points=tuple(
            TrailPoint(offset_point(p.position, 1.0, 1.0), p.timestamp_ms + 1)
            for p in carrier.points[:5]
        ),
    )
    carrier_path = tmp_path / "carrier.trail.jsonl"
    user_path = tmp_path / "user.trail.jsonl"
    save_trail(carrier, carrier_path)
    save_trail(user, user_path)
    salt = "00112233445566778899aabbccddeeff"

    assert run_cli(
        "match", "tokens", "--trail", str(carrier_path), "--salt-hex", salt,
        "--out", str(tmp_path / "carrier.tokens"), "--expand",
    ).returncode == 0
    assert run_cli(
        "match", "tokens", "--trail", str(user_path), "--salt-hex", salt,
        "--out", str(tmp_path / "user.tokens"),
    ).returncode == 0
    _, carrier_tokens = read_token_file(tmp_path / "carrier.tokens")
    assert len(carrier_tokens) > 20

    proc = run_cli("match", "tokens", "--intersect", str(tmp_path / "user.tokens"), str(tmp_path / "carrier.tokens"))
    assert proc.returncode == 0
    result = json.loads(proc.stdout)
    assert result["matches"] >= 5


def test_sim_sweep_deterministic(tmp_path):
    args = (
        "sim", "sweep", "--x", "0,0.5,1", "--seed", "7", "--agents", "1500",
        "--initial-infected", "30",
    )
    a = run_cli(*args, "--out", str(tmp_path / "a"))
    b = run_cli(*args, "--out", str(tmp_path / "b"))
    assert a.returncode == 0 and b.returncode == 0
    assert (tmp_path / "a" / "sweep.tsv").read_bytes() == (tmp_path / "b" / "sweep.tsv").read_bytes()
    assert (tmp_path / "a" / "sweep.jsonl").read_bytes() == (tmp_path / "b" / "sweep.jsonl").read_bytes()
    rows = [json.loads(l) for l in (tmp_path / "a" / "sweep.jsonl").read_text().splitlines()]
    assert [r["x"] for r in rows] == [0.0, 0.5, 1.0]
    assert rows[0]["formula_r"] == 2.5


def test_sim_run_and_compare(tmp_path):
    proc = run_cli(
        "sim", "run", "--strategy", "safepaths", "--agents", "1500", "--seed", "3",
        "--initial-infected", "30", "--out", str(tmp_path / "run"),
    )
    assert proc.returncode == 0
    record = json.loads(proc.stdout)
    assert 0.0 <= record["attack_rate"] <= 1.0

    proc = run_cli(
        "sim", "compare", "--agents", "2500", "--seed", "7", "--x", "0.6",
        "--initial-infected", "50", "--out", str(tmp_path / "cmp"),
    )
    assert proc.returncode == 0, proc.stderr
    tsv = (tmp_path / "cmp" / "strategies.tsv").read_text()
    assert tsv.splitlines()[0].startswith("strategy\t")
    assert len(tsv.splitlines()) == 8


def serve_and_wait(config_path, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    proc = subprocess.Popen(
        [sys.executable, "-m", "safepaths.cli", "serve", "--config", str(config_path)],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        env=full_env,
    )
    cfg = json.loads(config_path.read_text())
    url = f"http://{cfg['listen']}"
    for _ in range(100):
        try:
            with urllib.request.urlopen(url + "/v1/health", timeout=1) as resp:
                json.loads(resp.read())
            return proc, url
        except OSError:
            if proc.poll() is not None:
                raise RuntimeError(f"server died: {proc.stderr.read()}")
            time.sleep(0.05)
    proc.kill()
    raise RuntimeError("server never came up")


def test_serve_and_client_end_to_end(tmp_path):
    config = tmp_path / "server.json"
    config.write_text(
        json.dumps(
            {
                "listen": "127.0.0.1:8711",
                "retention_days": 37,
                "credentials": [],
                "store_dir": str(tmp_path / "store"),
            }
        )
    )
    token = "cli-test-credential"
    proc, url = serve_and_wait(config, env={"SAFEPATHS_AUTHORITY_TOKEN": token})
    try:
        # publish one carrier pair via HTTP (the authority-side path)
        import random

        from safepaths.matching import MatchParams
        from safepaths.publication import build_carrier_payloads, new_salt_epoch
        from safepaths.redaction import apply_manual_redactions

        now = int(time.time() * 1000)
        carrier = random_trail(random.Random(3), "carrier", BASE, 20, spread_m=50, start_ms=now - MS_PER_DAY)
        redacted = apply_manual_redactions(carrier, [])
        cells, tokens = build_carrier_payloads(redacted, 0, new_salt_epoch(), MatchParams(), now)
        for payload in (cells, tokens):
            req = urllib.request.Request(
                url + "/v1/payloads",
                data=json.dumps(payload.to_record()).encode(),
                headers={"X-Authority-Token": token},
                method="POST",
            )
            with urllib.request.urlopen(req, timeout=5) as resp:
                assert json.loads(resp.read())["cursor"] >= 1

        state = tmp_path / "state"
        cp = carrier.points[4]
        crossing = offset_point(cp.position, 2.0, 0.0)
        assert run_cli(
            "client", "log", "--state", str(state),
            "--lat", repr(crossing.lat), "--lon", repr(crossing.lon), "--ts", str(cp.timestamp_ms + 30_000),
        ).returncode == 0

        sync = run_cli("client", "sync", "--state", str(state), "--server", url, "--now", str(now))
        assert sync.returncode == 0, sync.stderr
        report = json.loads(sync.stdout)
        assert len(report["events"]) >= 1
        assert report["score"] > 0

        offline = run_cli("client", "report", "--state", str(state), "--now", str(now))
        assert json.loads(offline.stdout)["score"] == report["score"]

        # consent gate: export fails closed, then succeeds once granted
        denied = run_cli("client", "export", "--state", str(state), "--out", str(tmp_path / "x.trail.jsonl"), "--now", str(now))
        assert denied.returncode == 1
        assert "CONSENT" in denied.stderr or "consent" in denied.stderr
        granted = run_cli(
            "client", "export", "--state", str(state), "--out", str(tmp_path / "x.trail.jsonl"),
            "--grant-consent", "--now", str(now),
        )
        assert granted.returncode == 0
        assert load_trail(tmp_path / "x.trail.jsonl").points[0].timestamp_ms == cp.timestamp_ms + 30_000
    finally:
        proc.send_signal(signal.SIGINT)
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()


def test_domain_error_exit_1(tmp_path):
    proc = run_cli("redact", "auto", "--in", str(tmp_path / "missing.trail.jsonl"), "--out", "x", "--log", "y")
    assert proc.returncode == 1
    assert "error:" in proc.stderr
