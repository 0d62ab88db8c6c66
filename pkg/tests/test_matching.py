import math
import random
from collections import Counter

import pytest

from safepaths.matching import (
    ExposureEvent,
    MatchParams,
    brute_force_exposures,
    exposure_risk_score,
    hash_tokens,
    indexed_exposures,
    match_tokens,
    read_token_file,
    space_time_token,
    user_token_index,
    write_token_file,
)
from safepaths.synth import offset_point, random_match_instance, random_trail
from safepaths.trail import GeoPoint, LocationTrail, TrailPoint, haversine_distance

BASE = GeoPoint(lat=47.0, lon=8.0)
SALT = bytes(range(16))


def one_point_trail(owner, position, ts):
    return LocationTrail(owner_id=owner, points=(TrailPoint(position, ts),))


def as_multiset(events):
    return Counter(events)


def test_temporally_disjoint_trails_no_events():
    p = MatchParams()
    user = one_point_trail("u", BASE, 0)
    carrier = one_point_trail("c", BASE, 10_000_000)  # gap far beyond dt_max
    assert brute_force_exposures(user, [("c", carrier)], p) == []


def test_identical_point_event():
    p = MatchParams()
    user = one_point_trail("u", BASE, 1_000_000)
    events = brute_force_exposures(user, [("c", one_point_trail("c", BASE, 1_000_000))], p)
    assert len(events) == 1
    assert events[0].distance_m == 0.0
    assert events[0].time_gap_s == 0.0


def test_nearby_crossing_distance_and_gap():
    # carrier 0.00005 degrees north (~5.56 m), 100 s later
    p = MatchParams()
    user = one_point_trail("u", GeoPoint(lat=0, lon=0), 1_000_000)
    carrier = one_point_trail("c", GeoPoint(lat=0.00005, lon=0), 1_100_000)
    events = brute_force_exposures(user, [("c", carrier)], p)
    assert len(events) == 1
    assert events[0].distance_m == pytest.approx(5.5597, abs=0.01)
    assert events[0].time_gap_s == pytest.approx(100.0)


def test_indexed_empty_carriers():
    assert indexed_exposures(one_point_trail("u", BASE, 0), [], MatchParams()) == []


def test_indexed_matches_across_cell_boundary():
    # Points ~5 m apart straddling a 10 m cell boundary still match via the
    # neighbor probe.
    p = MatchParams()
    a = offset_point(GeoPoint(lat=0, lon=0), 9.0, 0.0)  # row 0 edge
    b = offset_point(GeoPoint(lat=0, lon=0), 14.0, 0.0)  # row 1
    user = one_point_trail("u", a, 0)
    carrier = one_point_trail("c", b, 1000)
    brute = brute_force_exposures(user, [("c", carrier)], p)
    fast = indexed_exposures(user, [("c", carrier)], p)
    assert len(brute) == 1
    assert as_multiset(fast) == as_multiset(brute)


def test_indexed_equals_oracle_randomized():
    rng = random.Random(2024)
    for _ in range(300):
        inst = random_match_instance(rng, max_total_points=200)
        brute = brute_force_exposures(inst.user, inst.carriers, inst.params)
        fast = indexed_exposures(inst.user, inst.carriers, inst.params)
        assert as_multiset(fast) == as_multiset(brute)


def test_token_determinism_across_devices():
    t = space_time_token(SALT, 12, -7, 99)
    assert t == space_time_token(SALT, 12, -7, 99)
    assert len(t) == 32
    assert t != space_time_token(b"other-salt-0123", 12, -7, 99)


def test_empty_trail_empty_tokens():
    empty = LocationTrail(owner_id="u", points=())
    assert hash_tokens(empty, MatchParams(), SALT) == frozenset()


def test_single_point_expansion_count():
    trail = one_point_trail("c", BASE, 0)
    tokens = hash_tokens(trail, MatchParams(), SALT, expand_neighbors=True)
    assert len(tokens) == 27  # 3x3 cells x 3 buckets
    assert len(hash_tokens(trail, MatchParams(), SALT)) == 1


def test_match_tokens_disjoint_and_identical():
    p = MatchParams()
    rng = random.Random(5)
    a = random_trail(rng, "a", BASE, 20, spread_m=30)
    b = random_trail(rng, "b", offset_point(BASE, 50_000, 0), 20, spread_m=30, start_ms=10**9)
    ta = hash_tokens(a, p, SALT)
    tb = hash_tokens(b, p, SALT)
    assert match_tokens(ta, tb) == frozenset()
    assert match_tokens(ta, ta) == ta


def test_token_completeness_and_soundness_randomized():
    """Carrier-side expansion leaves no token-layer false negatives, and any
    token match stays within 2x the cell diagonal / 2 buckets."""
    rng = random.Random(99)
    for _ in range(300):
        inst = random_match_instance(rng, max_total_points=120, token_safe=True)
        p = inst.params
        user_idx = user_token_index(inst.user, p, SALT)
        user_tokens = frozenset(user_idx)
        all_carrier_points = []
        carrier_tokens = frozenset()
        for cid, trail in inst.carriers:
            carrier_tokens |= hash_tokens(trail, p, SALT, expand_neighbors=True)
            all_carrier_points.extend(trail.points)
        hits = match_tokens(user_tokens, carrier_tokens)

        brute = brute_force_exposures(inst.user, inst.carriers, p)
        if brute:
            assert hits, "true exposure must produce a token intersection"
        # every user point involved in a true exposure has its token in the hits
        exposed_ts = {e.user_point.timestamp_ms for e in brute}
        hit_ts = {pt.timestamp_ms for tok in hits for pt in user_idx[tok]}
        assert exposed_ts <= hit_ts

        # soundness: each matched user point is near some carrier point in
        # both space and time
        diag = p.cell_size_m * math.sqrt(2.0)
        for tok in hits:
            for up in user_idx[tok]:
                assert any(
                    haversine_distance(up.position, cp.position) <= 2.0 * diag
                    and abs(up.timestamp_ms - cp.timestamp_ms) <= 2.0 * p.bucket_len_s * 1000
                    for cp in all_carrier_points
                )


def test_risk_score_empty():
    assert exposure_risk_score([], MatchParams()) == 0.0


def test_risk_score_hand_computed():
    # one event at 2 m with d_max 10 m and a 900 s bucket: 1 - e^-0.8
    p = MatchParams(d_max_m=10, dt_max_s=300, cell_size_m=10, bucket_len_s=900)
    e = ExposureEvent(
        user_point=TrailPoint(BASE, 0), carrier_trail_id="c", distance_m=2.0, time_gap_s=0.0
    )
    assert exposure_risk_score([e], p) == pytest.approx(1.0 - math.exp(-0.8))
    assert exposure_risk_score([e], p) == pytest.approx(0.5507, abs=1e-4)


def test_risk_score_monotonicity():
    p = MatchParams()
    rng = random.Random(13)
    events = [
        ExposureEvent(
            user_point=TrailPoint(BASE, i),
            carrier_trail_id="c",
            distance_m=rng.uniform(0, 10),
            time_gap_s=0.0,
        )
        for i in range(12)
    ]
    # superset never lowers the score
    for n in range(len(events)):
        assert exposure_risk_score(events[: n + 1], p) >= exposure_risk_score(events[:n], p)
    # decreasing any event's distance never lowers the score
    closer = [
        ExposureEvent(e.user_point, e.carrier_trail_id, e.distance_m / 2, e.time_gap_s)
        for e in events
    ]
    assert exposure_risk_score(closer, p) >= exposure_risk_score(events, p)
    assert 0.0 <= exposure_risk_score(events, p) <= 1.0


def test_token_file_round_trip_bit_exact(tmp_path):
    rng = random.Random(3)
    trail = random_trail(rng, "c", BASE, 40, spread_m=80)
    tokens = hash_tokens(trail, MatchParams(), SALT, expand_neighbors=True)
    path_a = tmp_path / "a.tokens"
    path_b = tmp_path / "b.tokens"
    write_token_file(path_a, SALT, tokens)
    write_token_file(path_b, SALT, frozenset(sorted(tokens)))  # insertion order must not matter
    assert path_a.read_bytes() == path_b.read_bytes()
    salt, loaded = read_token_file(path_a)
    assert salt == SALT
    assert loaded == tokens


def test_token_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.tokens"
    path.write_bytes(b"short")
    with pytest.raises(ValueError):
        read_token_file(path)
    path.write_bytes(SALT + b"\x00\x00\x00\x05hello")
    with pytest.raises(ValueError):
        read_token_file(path)
