import math

import numpy as np
from hypothesis import given, settings, strategies as st

from baafe.encoder import EncodedVector
from baafe.ffmath import PRIME, KeyMaterial, lagrange_interpolate
from baafe.reconstruct import (
    CandidateSet,
    FailureReason,
    _mulmod,
    _unrank,
    constant_terms,
    _zero_weight_table,
    match_candidates,
    reconstruct_key,
    reconstruct_key_reference,
)
from baafe.thresholds import ThresholdScheme, Variant, global_threshold
from baafe.vault import SecurityParams, Vault, VaultPoint, enroll

KEY = KeyMaterial(b"0123456789abcdef0123")


def vault_with(enc, sec, scheme=None, seed=0):
    return enroll(EncodedVector(enc), KEY, sec, scheme or global_threshold(), seed=seed, app_id="a")


def test_exact_probe_succeeds_first_try_when_no_chaff_selected():
    enc = tuple(range(1000, 1000 + 300 * 10, 300))
    v = vault_with(enc, SecurityParams(10, 50, 4))
    cands = match_candidates(EncodedVector(enc), v, global_threshold())
    assert cands.q == 10
    out = reconstruct_key(cands, v.sec, KEY.hash)
    assert out.success and out.key == KEY and out.attempts_used == 1


def test_noisy_probe_within_tau():
    enc = tuple(range(1000, 1000 + 500 * 10, 500))
    v = vault_with(enc, SecurityParams(10, 50, 4))
    probe = EncodedVector(tuple(x + (-1) ** i * 30 for i, x in enumerate(enc)))
    assert reconstruct_key(match_candidates(probe, v, global_threshold()), v.sec, KEY.hash).success


def test_far_probe_has_too_few_candidates():
    enc = tuple(range(1000, 1000 + 500 * 10, 500))
    v = vault_with(enc, SecurityParams(10, 5, 4))
    probe = EncodedVector(tuple(x + 200 for x in enc))
    out = reconstruct_key(match_candidates(probe, v, global_threshold(10)), v.sec, KEY.hash)
    assert not out and out.reason is FailureReason.TOO_FEW_CANDIDATES and out.attempts_used == 0


def test_match_tie_goes_to_smaller_x():
    sec = SecurityParams(2, 1, 1)
    v = Vault("a", (VaultPoint(120, 2), VaultPoint(100, 1), VaultPoint(5000, 3)), sec, Variant.GLOBAL)
    cands = match_candidates(EncodedVector((110, 5000)), v, global_threshold(20))
    assert [p.x for p in cands.pairs] == [100, 5000]


def test_match_collapses_repeated_selection():
    sec = SecurityParams(3, 1, 1)
    v = Vault("a", (VaultPoint(100, 1), VaultPoint(9000, 2)), sec, Variant.GLOBAL)
    cands = match_candidates(EncodedVector((100, 101, 99)), v, global_threshold(5))
    assert cands.q == 1


def test_per_feature_matching_respects_labels():
    sec = SecurityParams(2, 1, 1)
    points = (VaultPoint(100, 1, 0), VaultPoint(105, 2, 1), VaultPoint(3000, 3, 0), VaultPoint(104, 4, 1))
    v = Vault("a", points, sec, Variant.PER_FEATURE)
    scheme = ThresholdScheme(Variant.PER_FEATURE, (10.0, 10.0))
    cands = match_candidates(EncodedVector((104, 100)), v, scheme)
    assert [(p.x, p.label) for p in cands.pairs] == [(100, 0), (104, 1)]


def test_attempt_budget_is_exact():
    rng = np.random.default_rng(0)
    pts = tuple(VaultPoint(int(x), int(rng.integers(0, PRIME))) for x in rng.choice(65536, 30, replace=False))
    out = reconstruct_key(CandidateSet(pts), SecurityParams(30, 10, 8), KEY.hash, max_attempts=777)
    assert out.attempts_used == 777 and out.reason is FailureReason.ATTEMPTS_EXHAUSTED


def test_small_space_is_exhausted_exactly():
    rng = np.random.default_rng(1)
    pts = tuple(VaultPoint(int(x), int(rng.integers(0, PRIME))) for x in rng.choice(65536, 9, replace=False))
    out = reconstruct_key(CandidateSet(pts), SecurityParams(9, 10, 3), KEY.hash, max_attempts=10**6)
    assert out.attempts_used == math.comb(9, 4)


def test_duplicate_x_subsets_are_skipped_without_counting():
    # two points share x; only subsets avoiding the pair are valid
    pts = (VaultPoint(10, 5, 0), VaultPoint(10, 6, 1), VaultPoint(20, 7, 0))
    out = reconstruct_key(CandidateSet(pts), SecurityParams(2, 1, 1), b"\x00" * 32, max_attempts=100)
    assert out.attempts_used == 2


def test_one_corrupted_share_breaks_a_minimal_candidate_set():
    enc = tuple(range(1000, 1000 + 400 * 7, 400))
    v = vault_with(enc, SecurityParams(7, 20, 6))
    genuine = sorted((p for p in v.points if p.x in enc), key=lambda p: p.x)
    assert reconstruct_key(CandidateSet(tuple(genuine)), v.sec, KEY.hash).success
    bad = list(genuine)
    bad[3] = VaultPoint(bad[3].x, bad[3].y ^ 1)
    out = reconstruct_key(CandidateSet(tuple(bad)), v.sec, KEY.hash)
    assert not out and out.attempts_used == 1


def test_fast_path_matches_reference():
    enc = tuple(int(x) for x in np.random.default_rng(5).choice(65536, 20, replace=False))
    v = vault_with(enc, SecurityParams(20, 60, 6), global_threshold(5))
    genuine = [p for p in v.points if p.x in enc]
    chaff = [p for p in v.points if p.x not in enc][:10]
    cands = CandidateSet(tuple(genuine[:9] + chaff))
    for seed in range(3):
        fast = reconstruct_key(cands, v.sec, KEY.hash, seed=seed)
        slow = reconstruct_key_reference(cands, v.sec, KEY.hash, seed=seed)
        assert (fast.success, fast.attempts_used) == (slow.success, slow.attempts_used)
        assert fast.success


@settings(max_examples=50)
@given(st.integers(0, 2**61 - 2), st.integers(0, 2**61 - 2))
def test_vector_mulmod(a, b):
    out = _mulmod(np.array([a], dtype=np.uint64), np.array([b], dtype=np.uint64))
    assert int(out[0]) == a * b % PRIME


@settings(max_examples=30)
@given(st.lists(st.integers(0, 65535), min_size=3, max_size=12, unique=True), st.integers(0, 2**32))
def test_constant_terms_match_interpolation(xs, seed):
    rng = np.random.default_rng(seed)
    ys = [int(rng.integers(0, PRIME)) for _ in xs]
    k = len(xs) - 1
    subsets = np.array([sorted(rng.choice(len(xs), k, replace=False)) for _ in range(5)])
    got = constant_terms(subsets, _zero_weight_table(xs), np.array(ys, dtype=np.uint64))
    for row, c0 in zip(subsets, got):
        poly = lagrange_interpolate([(xs[i], ys[i]) for i in row], k - 1)
        assert poly.coeffs[0] == int(c0)


def test_unrank_is_a_bijection():
    q, k = 9, 4
    subsets = _unrank(np.arange(math.comb(q, k)), q, k)
    assert len({tuple(r) for r in subsets}) == math.comb(q, k)
    assert all(list(r) == sorted(r) and r[-1] < q for r in subsets)
