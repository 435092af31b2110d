import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from baafe.encoder import EncodedVector
from baafe.errors import (
    ChaffSpaceExhausted,
    InvalidParams,
    KeyTooLong,
    SchemaError,
    TooFewDistinctCodes,
    VersionMismatch,
)
from baafe.ffmath import KeyMaterial, key_to_coeffs, poly_eval
from baafe.thresholds import ThresholdScheme, Variant, global_threshold
from baafe.vault import (
    SecurityParams,
    VaultPoint,
    deserialize_vault,
    enroll,
    gen_chaff,
    genuine_points,
    serialize_vault,
)

KEY = KeyMaterial(b"sixteen byte key")


def codes(n, seed=0, spacing=None):
    rng = np.random.default_rng(seed)
    if spacing:
        return EncodedVector(tuple(1000 + spacing * i for i in range(n)))
    return EncodedVector(tuple(rng.choice(65536, size=n, replace=False).tolist()))


def split(v, enc_codes, P):
    on = [p for p in v.points if p.x in set(enc_codes) and p.y == poly_eval(P, p.x)]
    off = [p for p in v.points if p not in on]
    return on, off


def test_security_params_validation():
    SecurityParams(3, 1, 2)
    for bad in ((2, 5, 2), (5, 0, 2), (5, 5, 0)):
        with pytest.raises(InvalidParams):
            SecurityParams(*bad)


def test_global_vault_layout():
    sec = SecurityParams(10, 40, 4)
    enc = codes(10, spacing=300)
    v = enroll(enc, KEY, sec, global_threshold(50), seed=1, app_id="a")
    P = key_to_coeffs(KEY, 4)
    genuine, chaff = split(v, enc.codes, P)
    assert len(v) == 50 and len(genuine) == 10 and len(chaff) == 40
    assert all(min(abs(c.x - g) for g in enc.codes) > 50 for c in chaff)
    assert all(c.y != poly_eval(P, c.x) for c in chaff)
    assert len({p.x for p in v.points}) == 50


def test_duplicate_codes_collapse():
    enc = EncodedVector((5000, 5000, 9000, 12000))
    v = enroll(enc, KEY, SecurityParams(4, 10, 2), global_threshold(10), seed=0)
    assert len(v) == 3 + 10


def test_too_few_distinct_codes():
    enc = EncodedVector((5000, 5000, 9000, 9000))
    with pytest.raises(TooFewDistinctCodes):
        enroll(enc, KEY, SecurityParams(4, 10, 2), global_threshold(10), seed=0)


def test_key_too_long_for_degree():
    with pytest.raises(KeyTooLong):
        enroll(codes(4), KeyMaterial(b"x" * 20), SecurityParams(4, 10, 1), global_threshold(), seed=0)


def test_per_feature_vault_layout():
    enc = codes(6, seed=3)
    taus = (5.0, 10.0, 20.0, 40.0, 80.0, 160.0)
    scheme = ThresholdScheme(Variant.PER_FEATURE, taus)
    v = enroll(enc, KEY, SecurityParams(6, 7, 3), scheme, seed=2)
    assert len(v) == 6 * 8
    P = key_to_coeffs(KEY, 3)
    for label in range(6):
        mine = [p for p in v.points if p.label == label]
        assert len(mine) == 8
        genuine = [p for p in mine if p.x == enc.codes[label] and p.y == poly_eval(P, p.x)]
        assert len(genuine) == 1
        for p in mine:
            if p is not genuine[0]:
                assert abs(p.x - enc.codes[label]) > taus[label]


def test_enroll_is_deterministic_under_seed():
    sec = SecurityParams(8, 30, 3)
    a = enroll(codes(8), KEY, sec, global_threshold(), seed=9, app_id="x")
    b = enroll(codes(8), KEY, sec, global_threshold(), seed=9, app_id="x")
    assert serialize_vault(a) == serialize_vault(b)


def test_chaff_space_exhausted_precheck():
    # 20 genuine points with tau 2000 forbid nearly the whole code space
    enc = codes(20, spacing=3300)
    with pytest.raises(ChaffSpaceExhausted):
        enroll(enc, KEY, SecurityParams(20, 5000, 4), global_threshold(2000), seed=0)


def test_chaff_off_curve_and_outside_regions():
    P = key_to_coeffs(KEY, 2)
    genuine = genuine_points(EncodedVector((100, 200, 300)), P, False)
    chaff = gen_chaff(genuine, 50, global_threshold(5), P, seed=4)
    assert all(c.y != poly_eval(P, c.x) for c in chaff)
    assert all(min(abs(c.x - g) for g in (100, 200, 300)) > 5 for c in chaff)


def test_serialize_round_trip_and_no_secrets():
    v = enroll(codes(12), KEY, SecurityParams(12, 30, 5), global_threshold(), seed=3, app_id="app")
    blob = serialize_vault(v)
    assert deserialize_vault(blob) == v
    doc = json.loads(blob)
    assert set(doc) == {"format_version", "app_id", "n", "c", "d", "scheme", "points"}
    assert KEY.data not in blob and KEY.hash.hex().encode() not in blob and KEY.data.hex().encode() not in blob


def _doc():
    v = enroll(codes(6), KEY, SecurityParams(6, 10, 2), global_threshold(), seed=3, app_id="app")
    return json.loads(serialize_vault(v))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("points"),
        lambda d: d.update(n="6"),
        lambda d: d.update(scheme="bogus"),
        lambda d: d["points"][0].update(y="XYZ"),
        lambda d: d["points"][0].update(y="0" + d["points"][0]["y"]),
        lambda d: d["points"][0].update(x=70000),
        lambda d: d["points"][0].update(label=3),
        lambda d: d["points"].append(dict(d["points"][0])),
        lambda d: d.update(points=d["points"][:10]),
        lambda d: d["points"][0].pop("label"),
        lambda d: d.update(d=9),
    ],
)
def test_deserialize_rejects_malformed(mutate):
    doc = _doc()
    mutate(doc)
    with pytest.raises(SchemaError):
        deserialize_vault(json.dumps(doc))


def test_version_mismatch():
    doc = _doc()
    doc["format_version"] = 2
    with pytest.raises(VersionMismatch):
        deserialize_vault(json.dumps(doc))
    with pytest.raises(SchemaError):
        deserialize_vault(b"not json")


@settings(max_examples=40)
@given(
    st.lists(st.integers(0, 65535), min_size=4, max_size=20, unique=True),
    st.integers(1, 200),
    st.floats(1, 400),
    st.integers(0, 2**32 - 1),
)
def test_chaff_invariants_global(xs, c, tau, seed):
    P = key_to_coeffs(KEY, 3)
    genuine = genuine_points(EncodedVector(tuple(xs)), P, False)
    try:
        chaff = gen_chaff(genuine, c, global_threshold(tau), P, seed)
    except ChaffSpaceExhausted:
        return
    assert len(chaff) == c
    for p in chaff:
        assert all(abs(p.x - g) > tau for g in xs)
        assert p.y != poly_eval(P, p.x)
    assert len({p.x for p in chaff}) == c


def test_vault_point_bounds():
    with pytest.raises(ValueError):
        VaultPoint(65536, 0)
    with pytest.raises(ValueError):
        VaultPoint(0, -1)
