import numpy as np
import pytest
from hypothesis import given, strategies as st

from baafe.encoder import (
    CODE_MAX,
    EncodedVector,
    EncoderParams,
    NormalizationParams,
    calibrate_normalization,
    code_distance,
    encode,
    gen_encoder_params,
    normalize,
)
from baafe.errors import EmptyHistory, GeneratorDrift, LengthMismatch
from oracles import encode_straight


def test_columns_are_orthogonal_with_drawn_norms():
    p = gen_encoder_params(5, 12)
    for R, r in ((p.R1, p.r1), (p.R2, p.r2)):
        gram = R.T @ R
        assert np.allclose(gram, np.diag(r**2), atol=1e-12)
        assert np.all((0.5 <= r) & (r <= 1.5))


def test_d_max_definition():
    p = gen_encoder_params(9, 20)
    expected = max(np.linalg.norm(p.R1, axis=0).max(), np.linalg.norm(p.R2, axis=0).max()) + np.sqrt(20)
    assert p.d_max == pytest.approx(expected)


def test_same_seed_same_matrices():
    a, b = gen_encoder_params(42, 16), gen_encoder_params(42, 16)
    assert a.matrix_digest() == b.matrix_digest()
    assert a.matrix_digest() != gen_encoder_params(43, 16).matrix_digest()


def test_params_dict_round_trip_and_drift():
    p = gen_encoder_params(3, 8)
    raw = p.to_dict()
    assert EncoderParams.from_dict(raw).matrix_digest() == p.matrix_digest()
    raw["matrix_sha256"] = "0" * 64
    with pytest.raises(GeneratorDrift):
        EncoderParams.from_dict(raw)


def test_zero_vector_codes():
    # for v = 0 the distance to column j is its norm r_j
    p = gen_encoder_params(1, 10)
    codes = encode(np.zeros(10), p).codes
    for j, code in enumerate(codes):
        assert code >> 8 == min(255, int(256 * p.r1[j] / p.d_max))
        assert code & 0xFF == min(255, int(256 * p.r2[j] / p.d_max))


def test_encode_length_mismatch():
    with pytest.raises(LengthMismatch):
        encode(np.zeros(5), gen_encoder_params(1, 6))


def test_encode_is_deterministic():
    p = gen_encoder_params(11, 56)
    v = np.random.default_rng(0).random(56)
    assert encode(v, p) == encode(v.copy(), p)


def test_minmax_normalisation():
    hist = [[0.0, 5.0, 2.0], [10.0, 5.0, 4.0]]
    params = calibrate_normalization(hist, "minmax")
    assert list(normalize([5.0, 5.0, 3.0], params)) == [0.5, 0.5, 0.5]
    assert list(normalize([20.0, 1.0, -1.0], params)) == [1.0, 0.5, 0.0]
    again = NormalizationParams.from_dict(params.to_dict())
    assert again == params


def test_l1_normalisation():
    params = calibrate_normalization([[1.0, 1.0]], "l1")
    assert list(normalize([1.0, 3.0], params)) == [0.25, 0.75]
    assert list(normalize([0.0, 0.0], params)) == [0.0, 0.0]


def test_empty_history():
    with pytest.raises(EmptyHistory):
        calibrate_normalization([], "minmax")


def test_encoded_vector_range():
    with pytest.raises(ValueError):
        EncodedVector((CODE_MAX + 1,))
    assert code_distance(300, 45) == 255


@given(st.integers(1, 24), st.integers(0, 2**31 - 1), st.data())
def test_encode_matches_straight_line_oracle(n, seed, data):
    p = gen_encoder_params(seed, n)
    v = data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n))
    assert list(encode(v, p).codes) == encode_straight(v, p.R1, p.R2, p.d_max)


@given(st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_codes_in_range(v):
    codes = encode(v, gen_encoder_params(0, 8)).codes
    assert all(0 <= c <= CODE_MAX for c in codes)
