"""Key reconstruction: nearest-point matching and a bounded subset search.

Each probe code selects its closest vault point if it lies within the
threshold.  Random ``(d + 1)``-subsets of the selected points are then
interpolated until one decodes to a key whose SHA-256 matches the expected
hash, or the attempt budget runs out.

Most attempts in a failing search involve chaff and decode to garbage.  The
search therefore evaluates the constant coefficient of a whole batch of
subsets with vectorised modular arithmetic first; only subsets whose constant
term could start a valid key encoding pay for a full interpolation.  Attempt
numbering is exactly that of the sequential search.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from baafe.encoder import EncodedVector
from baafe.ffmath import (
    PRIME,
    KeyMaterial,
    coeffs_to_key,
    header_plausible,
    key_hash,
    lagrange_interpolate,
    _batch_inverse,
)
from baafe.errors import MalformedShares
from baafe.thresholds import ThresholdScheme
from baafe.vault import SecurityParams, Vault, VaultPoint

DEFAULT_MAX_ATTEMPTS = 20_000
#: below this many combinations the search enumerates ranks directly
SMALL_SPACE = 1 << 20
_BATCH = 2048

_P = np.uint64(PRIME)
_LOW32 = np.uint64(0xFFFFFFFF)
_LOW29 = np.uint64((1 << 29) - 1)


class FailureReason(str, enum.Enum):
    TOO_FEW_CANDIDATES = "too_few_candidates"
    ATTEMPTS_EXHAUSTED = "attempts_exhausted"


@dataclass(frozen=True)
class CandidateSet:
    pairs: tuple[VaultPoint, ...]

    @property
    def q(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class AuthOutcome:
    key: KeyMaterial | None
    attempts_used: int
    reason: FailureReason | None = None
    timings: dict | None = None
    q: int = 0

    @property
    def success(self) -> bool:
        return self.key is not None

    def __bool__(self):
        return self.success


def match_candidates(probe: EncodedVector, v: Vault, scheme: ThresholdScheme) -> CandidateSet:
    """Closest vault point per probe feature, kept only if within the threshold.

    Ties go to the smaller x.  Under the per-feature scheme only points
    labelled with the probe's feature index are considered.
    """
    codes = np.asarray(probe.codes, dtype=np.int64)
    if len(codes) != v.sec.n:
        raise ValueError(f"probe has {len(codes)} codes, vault expects {v.sec.n}")
    order = sorted(range(len(v.points)), key=lambda i: v.points[i].x)
    xs = np.array([v.points[i].x for i in order], dtype=np.int64)
    chosen: list[int] = []
    seen = set()

    def take(idx: int):
        if idx not in seen:
            seen.add(idx)
            chosen.append(idx)

    if scheme.per_feature:
        labels = np.array([v.points[i].label for i in order], dtype=np.int64)
        for feature, code in enumerate(codes):
            mine = np.flatnonzero(labels == feature)
            if mine.size == 0:
                continue
            dist = np.abs(xs[mine] - code)
            best = int(np.argmin(dist))
            if dist[best] <= scheme.tau_for(feature):
                take(order[mine[best]])
    else:
        dist = np.abs(xs[None, :] - codes[:, None])
        best = np.argmin(dist, axis=1)  # first minimum = smallest x
        within = dist[np.arange(len(codes)), best] <= scheme.tau
        for ok, b in zip(within, best):
            if ok:
                take(order[int(b)])
    return CandidateSet(tuple(v.points[i] for i in chosen))


# -- vectorised GF(2^61 - 1) helpers ---------------------------------------


def _mulmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise ``a * b mod (2^61 - 1)`` on uint64 arrays of canonical values."""
    a_hi, a_lo = a >> np.uint64(32), a & _LOW32
    b_hi, b_lo = b >> np.uint64(32), b & _LOW32
    hh = a_hi * b_hi  # < 2^58, weight 2^64 = 8 (mod p)
    mid = a_hi * b_lo + a_lo * b_hi  # < 2^62, weight 2^32
    ll = a_lo * b_lo  # < 2^64
    s = (
        (hh << np.uint64(3))
        + (mid >> np.uint64(29))
        + ((mid & _LOW29) << np.uint64(32))
        + (ll & _P)
        + (ll >> np.uint64(61))
    )
    s = (s & _P) + (s >> np.uint64(61))
    return np.where(s >= _P, s - _P, s)


def _addmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = a + b
    return np.where(s >= _P, s - _P, s)


def _zero_weight_table(xs: Sequence[int]) -> np.ndarray:
    """``A[i, j] = x_j / (x_j - x_i)`` so that ``L_i(0) = prod_{j != i} A[i, j]``."""
    q = len(xs)
    pairs = [(i, j) for i in range(q) for j in range(q) if xs[i] != xs[j]]
    inv = _batch_inverse([(xs[j] - xs[i]) % PRIME for i, j in pairs], PRIME) if pairs else []
    table = np.ones((q, q), dtype=np.uint64)
    for (i, j), d_inv in zip(pairs, inv):
        table[i, j] = xs[j] * d_inv % PRIME
    return table


def constant_terms(subsets: np.ndarray, table: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``P(0)`` of the interpolant through each row of candidate indices."""
    B, k = subsets.shape
    weights = np.ones((B, k), dtype=np.uint64)
    for m in range(k):
        col = subsets[:, m : m + 1]
        factor = table[subsets, col]  # A[S_l, S_m]; the diagonal is 1
        weights = _mulmod(weights, factor)
    terms = _mulmod(weights, ys[subsets])
    acc = terms[:, 0]
    for m in range(1, k):
        acc = _addmod(acc, terms[:, m])
    return acc


# -- subset enumeration ------------------------------------------------------


@functools.lru_cache(maxsize=64)
def _binom_table(q: int, k: int) -> np.ndarray:
    cap = 1 << 62  # entries above any usable rank only need to compare larger
    return np.array([[min(math.comb(c, t), cap) for t in range(k + 1)] for c in range(q)], dtype=np.int64)


def _unrank(ranks: np.ndarray, q: int, k: int) -> np.ndarray:
    """Combinatorial number system: rank -> sorted k-subset of range(q)."""
    binom = _binom_table(q, k)
    rem = ranks.astype(np.int64).copy()
    out = np.empty((len(ranks), k), dtype=np.int64)
    for t in range(k, 0, -1):
        col = binom[:, t]
        c = np.searchsorted(col, rem, side="right") - 1
        out[:, t - 1] = c
        rem -= col[c]
    return out


def _subset_batches(q: int, k: int, limit: int, rng: np.random.Generator):
    """Yield batches of distinct random k-subsets, at most ``limit`` in total."""
    total = math.comb(q, k)
    if total < SMALL_SPACE:
        ranks = rng.permutation(total)[:limit] if total > limit else rng.permutation(total)
        for start in range(0, len(ranks), _BATCH):
            yield _unrank(ranks[start : start + _BATCH], q, k)
        return
    # the space dwarfs the budget; callers stop after ``limit`` attempts
    seen: set[bytes] = set()
    while True:
        keys = rng.random((min(_BATCH, limit), q))
        rows = np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k], axis=1)
        fresh = []
        for row in rows:
            tag = row.astype(np.uint16).tobytes()
            if tag not in seen:
                seen.add(tag)
                fresh.append(row)
        if fresh:
            yield np.array(fresh, dtype=np.int64)


def _try_subset(points: Sequence[tuple[int, int]], d: int, expected_hash: bytes) -> KeyMaterial | None:
    poly = lagrange_interpolate(points, d)
    try:
        key = coeffs_to_key(poly)
    except MalformedShares:
        return None
    return key if key.hash == expected_hash else None


def reconstruct_key(
    cands: CandidateSet,
    sec: SecurityParams,
    expected_hash: bytes,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    seed=None,
) -> AuthOutcome:
    """Search random ``(d + 1)``-subsets of the candidates for the enrolled key.

    Subsets repeating an x-coordinate cannot be interpolated and are skipped
    without consuming an attempt.  At most ``min(max_attempts, C(q, d + 1))``
    attempts are made.
    """
    k = sec.d + 1
    unique = list(dict.fromkeys((p.x, p.y) for p in cands.pairs))
    q = len(unique)
    if len({x for x, _ in unique}) < k:
        return AuthOutcome(None, 0, FailureReason.TOO_FEW_CANDIDATES, q=q)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = min(max_attempts, math.comb(q, k))
    xs = [x for x, _ in unique]
    xs_arr = np.array(xs, dtype=np.int64)
    ys = np.array([y for _, y in unique], dtype=np.uint64)
    table = _zero_weight_table(xs)
    has_dup_x = len(set(xs)) != q

    attempts = 0
    for batch in _subset_batches(q, k, limit, rng):
        c0 = constant_terms(batch, table, ys)
        if has_dup_x:
            sx = np.sort(xs_arr[batch], axis=1)
            valid = np.all(sx[:, 1:] != sx[:, :-1], axis=1)
        else:
            valid = np.ones(len(batch), dtype=bool)
        for row, value, ok in zip(batch, c0.tolist(), valid):
            if not ok:
                continue
            attempts += 1
            if header_plausible(value, sec.d):
                key = _try_subset([unique[i] for i in row], sec.d, expected_hash)
                if key is not None:
                    return AuthOutcome(key, attempts, q=q)
            if attempts >= limit:
                return AuthOutcome(None, attempts, FailureReason.ATTEMPTS_EXHAUSTED, q=q)
    return AuthOutcome(None, attempts, FailureReason.ATTEMPTS_EXHAUSTED, q=q)


def reconstruct_key_reference(
    cands: CandidateSet,
    sec: SecurityParams,
    expected_hash: bytes,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    seed=None,
) -> AuthOutcome:
    """Straight sequential search over the same subset order; slow, for cross-checks."""
    k = sec.d + 1
    unique = list(dict.fromkeys((p.x, p.y) for p in cands.pairs))
    q = len(unique)
    if len({x for x, _ in unique}) < k:
        return AuthOutcome(None, 0, FailureReason.TOO_FEW_CANDIDATES, q=q)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = min(max_attempts, math.comb(q, k))
    attempts = 0
    for batch in _subset_batches(q, k, limit, rng):
        for row in batch:
            pts = [unique[i] for i in row]
            if len({x for x, _ in pts}) != k:
                continue
            attempts += 1
            key = _try_subset(pts, sec.d, expected_hash)
            if key is not None:
                return AuthOutcome(key, attempts, q=q)
            if attempts >= limit:
                return AuthOutcome(None, attempts, FailureReason.ATTEMPTS_EXHAUSTED, q=q)
    return AuthOutcome(None, attempts, FailureReason.ATTEMPTS_EXHAUSTED, q=q)


def expected_hash_of(key: KeyMaterial | bytes) -> bytes:
    return key.hash if isinstance(key, KeyMaterial) else key_hash(key)
