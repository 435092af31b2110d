import random

import pytest
from hypothesis import given, strategies as st

from baafe.errors import DuplicateX, KeyTooLong, MalformedShares, WrongCount
from baafe.ffmath import (
    MAX_KEY_OCTETS,
    PRIME,
    FieldElement,
    KeyMaterial,
    Polynomial,
    coeffs_to_key,
    header_plausible,
    key_capacity,
    key_hash,
    key_to_coeffs,
    lagrange_interpolate,
    poly_eval,
)
from oracles import interpolate_naive

elements = st.integers(min_value=0, max_value=PRIME - 1)


# -- hand-computed values ------------------------------------------------------


def test_poly_eval_small_prime():
    # 5 + 2*4 + 3*16 = 61
    assert poly_eval([5, 2, 3], 4, prime=97) == 61


def test_poly_eval_reduces_mod_prime():
    # 5 + 2*10 + 3*100 = 325 = 3*97 + 34
    assert poly_eval([5, 2, 3], 10, prime=97) == 34


def test_interpolate_small_prime():
    # y = 5 + 3x + 2x^2 through x = 1, 2, 3
    poly = lagrange_interpolate([(1, 10), (2, 19), (3, 32)], 2, prime=97)
    assert poly.coeffs == (5, 3, 2)


def test_interpolate_constant():
    assert lagrange_interpolate([(7, 42)], 0).coeffs == (42,)


def test_key_layout_two_octets():
    p = key_to_coeffs(KeyMaterial(b"\xaa\xbb"), 1)
    assert p.coeffs == (0x0002AABB000000, 0)


def test_key_layout_spills_into_second_chunk():
    p = key_to_coeffs(KeyMaterial(bytes(range(1, 9))), 1)
    blob = b"\x00\x08" + bytes(range(1, 9)) + b"\x00" * 4
    assert p.coeffs == (int.from_bytes(blob[:7], "big"), int.from_bytes(blob[7:], "big"))


def test_key_capacity_values():
    assert key_capacity(1) == 12
    assert key_capacity(32) == 229
    assert KeyMaterial(b"x" * MAX_KEY_OCTETS)


def test_key_too_long():
    with pytest.raises(KeyTooLong):
        key_to_coeffs(KeyMaterial(b"x" * 13), 1)


def test_key_material_checks_length_and_hash():
    with pytest.raises(ValueError):
        KeyMaterial(b"")
    with pytest.raises(ValueError):
        KeyMaterial(b"x" * (MAX_KEY_OCTETS + 1))
    with pytest.raises(ValueError):
        KeyMaterial(b"abc", hash=b"\x00" * 32)
    k = KeyMaterial(b"abc")
    assert k.hash == key_hash(b"abc")
    assert "abc" not in repr(k) and b"abc".hex() not in repr(k)


def test_wrong_count_and_duplicate_x():
    with pytest.raises(WrongCount):
        lagrange_interpolate([(1, 1), (2, 2)], 2)
    with pytest.raises(DuplicateX):
        lagrange_interpolate([(1, 1), (1, 2), (3, 3)], 2)
    # duplicates modulo p count as duplicates too
    with pytest.raises(DuplicateX):
        lagrange_interpolate([(1, 1), (1 + PRIME, 2)], 1)


def test_field_element_arithmetic():
    a = FieldElement(PRIME - 1)
    assert a + 1 == 0
    assert FieldElement(0) - 1 == PRIME - 1
    assert a * a == 1
    assert FieldElement(3).inverse() * 3 == 1
    assert FieldElement(6) / 3 == 2
    assert FieldElement.fromhex(FieldElement(12345).hex()) == 12345
    with pytest.raises(ZeroDivisionError):
        FieldElement(0).inverse()


def test_polynomial_json_round_trip():
    p = Polynomial((1, PRIME - 1, 0, 77))
    assert Polynomial.from_json(p.to_json()) == p
    assert p.degree == 3


# -- decoding failures -----------------------------------------------------------


def test_malformed_zero_length():
    with pytest.raises(MalformedShares):
        coeffs_to_key(Polynomial((0, 0)))


def test_malformed_wide_coefficient():
    with pytest.raises(MalformedShares):
        coeffs_to_key(Polynomial((1 << 56, 0)))


def test_malformed_overrun():
    # header claims 20 octets, only 12 fit after it
    with pytest.raises(MalformedShares):
        coeffs_to_key(Polynomial((20 << 40, 0)))


def test_malformed_nonzero_padding():
    good = key_to_coeffs(KeyMaterial(b"\x01\x02"), 1)
    bad = Polynomial((good.coeffs[0], 1))
    with pytest.raises(MalformedShares):
        coeffs_to_key(bad)


def test_every_single_corruption_is_detected():
    # flip each coefficient of a real encoding in turn: never the same key
    rng = random.Random(7)
    for d in (1, 4, 12):
        key = KeyMaterial(bytes(rng.randrange(256) for _ in range(key_capacity(d) // 2)))
        p = key_to_coeffs(key, d)
        for i in range(d + 1):
            coeffs = list(p.coeffs)
            coeffs[i] = (coeffs[i] + 1 + rng.randrange(PRIME - 1)) % PRIME
            try:
                assert coeffs_to_key(Polynomial(coeffs)).hash != key.hash
            except MalformedShares:
                pass


def test_header_plausible():
    p = key_to_coeffs(KeyMaterial(b"k" * 30), 8)
    assert header_plausible(p.coeffs[0], 8)
    assert not header_plausible(0, 8)
    assert not header_plausible(1 << 56, 8)
    assert not header_plausible(200 << 40, 8)  # longer than 9 chunks can hold


# -- properties --------------------------------------------------------------------


@given(elements, elements, elements)
def test_field_axioms(a, b, c):
    A, B, C = FieldElement(a), FieldElement(b), FieldElement(c)
    assert A + B == B + A
    assert A * B == B * A
    assert (A + B) + C == A + (B + C)
    assert (A * B) * C == A * (B * C)
    assert A * (B + C) == A * B + A * C
    assert A - A == 0
    if a:
        assert A * A.inverse() == 1


@given(st.lists(elements, min_size=1, max_size=12), st.data())
def test_interpolation_recovers_polynomial(coeffs, data):
    d = len(coeffs) - 1
    xs = data.draw(st.lists(elements, min_size=d + 1, max_size=d + 1, unique=True))
    pts = [(x, poly_eval(coeffs, x)) for x in xs]
    assert lagrange_interpolate(pts, d).coeffs == tuple(coeffs)


@given(st.lists(st.tuples(st.integers(0, 65535), elements), min_size=1, max_size=10, unique_by=lambda p: p[0]))
def test_interpolation_matches_naive_oracle(points):
    d = len(points) - 1
    assert list(lagrange_interpolate(points, d).coeffs) == interpolate_naive(points, PRIME)


@given(st.binary(min_size=1, max_size=64), st.integers(min_value=9, max_value=48))
def test_key_codec_round_trip(data, d):
    key = KeyMaterial(data)
    p = key_to_coeffs(key, d)
    assert len(p.coeffs) == d + 1
    assert all(0 <= c < (1 << 56) for c in p.coeffs)
    assert coeffs_to_key(p) == key


def test_thousand_random_round_trips():
    rng = random.Random(2021)
    for _ in range(1000):
        d = rng.randint(1, 48)
        key = KeyMaterial(bytes(rng.randrange(256) for _ in range(rng.randint(1, min(key_capacity(d), MAX_KEY_OCTETS)))))
        p = key_to_coeffs(key, d)
        xs = rng.sample(range(65536), d + 1)
        poly = lagrange_interpolate([(x, poly_eval(p, x)) for x in xs], d)
        assert coeffs_to_key(poly).data == key.data
