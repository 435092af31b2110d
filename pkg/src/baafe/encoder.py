"""Feature normalisation and the random-projection distance encoder.

A normalised feature vector ``v`` in ``[0, 1]^n`` is compared against the
columns of two random matrices with orthogonal columns.  Each Euclidean
distance is quantised to one octet, and the two octets for column ``j`` are
packed into a 16-bit code ``(b1 << 8) | b2``.

Encoder state is private to the fuzzy-extractor service; it never goes into
the public vault.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from baafe.behavior import FeatureVector
from baafe.errors import DegenerateMatrix, EmptyHistory, GeneratorDrift, LengthMismatch

QUANT_STEPS = 256
CODE_MAX = QUANT_STEPS * QUANT_STEPS - 1
_MAX_RETRIES = 3
_PIVOT_EPS = 1e-10


class NormScheme(str, enum.Enum):
    L1 = "l1"
    MINMAX = "minmax"


@dataclass(frozen=True)
class NormalizationParams:
    scheme: NormScheme
    mins: tuple[float, ...] = ()
    maxs: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "scheme", NormScheme(self.scheme))
        if self.scheme is NormScheme.MINMAX:
            if len(self.mins) != len(self.maxs) or not self.mins:
                raise ValueError("MinMax params need equal-length, nonempty min/max")
            if any(lo > hi for lo, hi in zip(self.mins, self.maxs)):
                raise ValueError("min must not exceed max")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value, "min": list(self.mins), "max": list(self.maxs)}

    @classmethod
    def from_dict(cls, raw: dict) -> "NormalizationParams":
        return cls(NormScheme(raw["scheme"]), tuple(raw.get("min", ())), tuple(raw.get("max", ())))


@dataclass(frozen=True, eq=False)
class EncoderParams:
    n: int
    seed: int
    R1: np.ndarray
    R2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    d_max: float

    def matrix_digest(self) -> str:
        return matrix_digest(self.R1, self.R2)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "d_max": self.d_max,
            "r1": self.r1.tolist(),
            "r2": self.r2.tolist(),
            "matrix_sha256": self.matrix_digest(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EncoderParams":
        """Regenerate matrices from the seed and check them against the stored digest."""
        params = gen_encoder_params(int(raw["seed"]), int(raw["n"]))
        if (
            params.matrix_digest() != raw["matrix_sha256"]
            or params.r1.tolist() != list(raw["r1"])
            or params.r2.tolist() != list(raw["r2"])
            or params.d_max != raw["d_max"]
        ):
            raise GeneratorDrift("encoder matrices regenerated from seed do not match the stored digest")
        return params


@dataclass(frozen=True)
class EncodedVector:
    codes: tuple[int, ...]

    def __post_init__(self):
        codes = tuple(int(c) for c in self.codes)
        if any(not 0 <= c <= CODE_MAX for c in codes):
            raise ValueError("codes must lie in [0, 65535]")
        object.__setattr__(self, "codes", codes)

    def __len__(self):
        return len(self.codes)

    def __iter__(self):
        return iter(self.codes)


def matrix_digest(R1: np.ndarray, R2: np.ndarray) -> str:
    h = hashlib.sha256()
    for m in (R1, R2):
        h.update(np.ascontiguousarray(m, dtype="<f8").tobytes())
    return h.hexdigest()


def _as_matrix(history: Sequence[FeatureVector | Sequence[float]]) -> np.ndarray:
    rows = [np.asarray(getattr(h, "values", h), dtype=float) for h in history]
    return np.vstack(rows)


def calibrate_normalization(
    history: Sequence[FeatureVector | Sequence[float]], scheme: NormScheme | str = NormScheme.MINMAX
) -> NormalizationParams:
    scheme = NormScheme(scheme)
    if len(history) == 0:
        raise EmptyHistory("cannot calibrate normalisation on an empty history")
    if scheme is NormScheme.L1:
        return NormalizationParams(scheme)
    m = _as_matrix(history)
    return NormalizationParams(scheme, tuple(m.min(axis=0).tolist()), tuple(m.max(axis=0).tolist()))


def normalize(fv: FeatureVector | Sequence[float], p: NormalizationParams) -> np.ndarray:
    """Map a feature vector into ``[0, 1]^n``.

    MinMax clamps out-of-range values and sends constant features to 0.5.
    L1 divides by the vector's L1 norm (the zero vector stays zero).
    """
    v = np.asarray(getattr(fv, "values", fv), dtype=float)
    if p.scheme is NormScheme.L1:
        total = np.abs(v).sum()
        return np.zeros_like(v) if total == 0 else v / total
    if len(v) != len(p.mins):
        raise LengthMismatch(f"vector has {len(v)} features, params have {len(p.mins)}")
    lo = np.asarray(p.mins)
    hi = np.asarray(p.maxs)
    span = hi - lo
    flat = span == 0
    out = np.where(flat, 0.5, (v - lo) / np.where(flat, 1.0, span))
    return np.clip(out, 0.0, 1.0)


def _gram_schmidt(a: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt on the columns of ``a``."""
    q = np.array(a, dtype=float, copy=True)
    n = q.shape[1]
    for j in range(n):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        norm = np.linalg.norm(q[:, j])
        if norm < _PIVOT_EPS:
            raise DegenerateMatrix(f"column {j} collapsed during orthonormalisation")
        q[:, j] /= norm
    return q


def _orthonormal(rng: np.random.Generator, n: int) -> np.ndarray:
    for _ in range(_MAX_RETRIES + 1):
        try:
            return _gram_schmidt(rng.standard_normal((n, n)))
        except DegenerateMatrix:
            continue
    raise DegenerateMatrix(f"no full-rank draw after {_MAX_RETRIES} retries")


def gen_encoder_params(seed: int, n: int) -> EncoderParams:
    """Deterministically derive ``R1``, ``R2`` (scaled orthonormal columns) from a seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    q1 = _orthonormal(rng, n)
    q2 = _orthonormal(rng, n)
    r1 = rng.uniform(0.5, 1.5, size=n)
    r2 = rng.uniform(0.5, 1.5, size=n)
    R1 = q1 * r1
    R2 = q2 * r2
    root_n = math.sqrt(n)
    d_max = float(
        max(
            np.max(np.linalg.norm(R1, axis=0) + root_n),
            np.max(np.linalg.norm(R2, axis=0) + root_n),
        )
    )
    for m in (R1, R2, r1, r2):
        m.setflags(write=False)
    return EncoderParams(n=n, seed=seed, R1=R1, R2=R2, r1=r1, r2=r2, d_max=d_max)


def _quantize(dist: np.ndarray, d_max: float) -> np.ndarray:
    return np.clip(np.floor(QUANT_STEPS * dist / d_max), 0, QUANT_STEPS - 1).astype(np.int64)


def encode(normalized: Sequence[float], p: EncoderParams) -> EncodedVector:
    v = np.asarray(normalized, dtype=float)
    if v.shape != (p.n,):
        raise LengthMismatch(f"expected {p.n} features, got {v.shape}")
    d1 = np.sqrt(((v[:, None] - p.R1) ** 2).sum(axis=0))
    d2 = np.sqrt(((v[:, None] - p.R2) ** 2).sum(axis=0))
    b1 = _quantize(d1, p.d_max)
    b2 = _quantize(d2, p.d_max)
    return EncodedVector(tuple(((b1 << 8) | b2).tolist()))


def code_distance(x: int, x_prime: int) -> float:
    return float(abs(int(x) - int(x_prime)))
