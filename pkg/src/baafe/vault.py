"""Enrollment: bind a key to encoded behavior and hide it among chaff points.

The vault is public helper data.  It deliberately carries neither the key
hash nor the thresholds: both would let an offline attacker test candidate
keys or locate genuine points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from baafe.encoder import CODE_MAX, EncodedVector
from baafe.errors import (
    ChaffSpaceExhausted,
    InvalidParams,
    SchemaError,
    TooFewDistinctCodes,
    VersionMismatch,
)
from baafe.ffmath import PRIME, KeyMaterial, Polynomial, key_to_coeffs, poly_eval
from baafe.thresholds import ThresholdScheme, Variant

FORMAT_VERSION = 1
X_SPACE = CODE_MAX + 1
MAX_CONSECUTIVE_REJECTS = 10_000


@dataclass(frozen=True)
class SecurityParams:
    n: int
    c: int
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise InvalidParams(f"degree must be >= 1, got {self.d}")
        if self.c < 1:
            raise InvalidParams(f"chaff count must be >= 1, got {self.c}")
        if self.n < self.d + 1:
            raise InvalidParams(f"n={self.n} features cannot carry a degree-{self.d} polynomial")


@dataclass(frozen=True)
class VaultPoint:
    x: int
    y: int
    label: int | None = None

    def __post_init__(self):
        if not 0 <= self.x <= CODE_MAX:
            raise ValueError(f"x={self.x} outside the 16-bit code space")
        if not 0 <= self.y < PRIME:
            raise ValueError("y outside the field")


@dataclass(frozen=True)
class Vault:
    app_id: str
    points: tuple[VaultPoint, ...]
    sec: SecurityParams
    scheme: Variant
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "scheme", Variant(self.scheme))

    def __len__(self):
        return len(self.points)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _forbid(mask: np.ndarray, centre: int, radius: float) -> None:
    lo = max(0, math.ceil(centre - radius))
    hi = min(X_SPACE - 1, math.floor(centre + radius))
    mask[lo : hi + 1] = True


def _draw_chaff_group(
    centres: Sequence[int],
    radius: float,
    count: int,
    P: Polynomial,
    rng: np.random.Generator,
    label: int | None,
) -> list[VaultPoint]:
    forbidden = np.zeros(X_SPACE, dtype=bool)
    for x in centres:
        _forbid(forbidden, x, radius)
    free = X_SPACE - int(forbidden.sum())
    if free < count:
        raise ChaffSpaceExhausted(
            f"only {free} x-values lie outside the threshold regions, {count} chaff points requested"
        )
    out = []
    misses = 0
    while len(out) < count:
        x = int(rng.integers(0, X_SPACE))
        if forbidden[x]:
            misses += 1
            if misses >= MAX_CONSECUTIVE_REJECTS:
                raise ChaffSpaceExhausted(f"{misses} consecutive draws fell inside threshold regions")
            continue
        misses = 0
        forbidden[x] = True  # chaff x's are distinct within a group
        on_curve = poly_eval(P, x)
        y = int(rng.integers(0, PRIME))
        while y == on_curve:
            y = int(rng.integers(0, PRIME))
        out.append(VaultPoint(x, y, label))
    return out


def gen_chaff(
    genuine: Sequence[VaultPoint],
    c: int,
    scheme: ThresholdScheme,
    P: Polynomial,
    seed=None,
) -> list[VaultPoint]:
    """Random points off the polynomial and outside every threshold region.

    Global/per-app schemes keep each chaff x farther than ``tau`` from every
    genuine x.  The per-feature scheme draws ``c`` chaff points per label,
    each farther than ``tau_i`` from that label's genuine point only.
    """
    rng = _as_rng(seed)
    if not scheme.per_feature:
        return _draw_chaff_group([g.x for g in genuine], scheme.tau, c, P, rng, None)
    out = []
    for g in sorted(genuine, key=lambda p: p.label):
        out.extend(_draw_chaff_group([g.x], scheme.tau_for(g.label), c, P, rng, g.label))
    return out


def genuine_points(encoded: EncodedVector, P: Polynomial, per_feature: bool) -> list[VaultPoint]:
    if per_feature:
        return [VaultPoint(x, poly_eval(P, x), i) for i, x in enumerate(encoded.codes)]
    seen = set()
    out = []
    for x in encoded.codes:
        if x not in seen:
            seen.add(x)
            out.append(VaultPoint(x, poly_eval(P, x)))
    return out


def enroll(
    encoded: EncodedVector,
    key: KeyMaterial,
    sec: SecurityParams,
    scheme: ThresholdScheme,
    seed=None,
    app_id: str = "",
) -> Vault:
    """Build the public vault for ``app_id``.

    Raises:
        TooFewDistinctCodes: fewer than ``d + 1`` distinct genuine x-values.
        KeyTooLong: the key does not fit into ``d + 1`` coefficients.
    """
    if len(encoded) != sec.n:
        raise InvalidParams(f"encoded vector has {len(encoded)} codes, params say n={sec.n}")
    if scheme.per_feature and len(scheme.tau) != sec.n:
        raise InvalidParams("per-feature scheme must have one threshold per feature")
    rng = _as_rng(seed)
    P = key_to_coeffs(key, sec.d)
    genuine = genuine_points(encoded, P, scheme.per_feature)
    distinct = len({g.x for g in genuine})
    if distinct < sec.d + 1:
        raise TooFewDistinctCodes(f"{distinct} distinct codes, need {sec.d + 1}")
    chaff = gen_chaff(genuine, sec.c, scheme, P, rng)
    points = genuine + chaff
    order = rng.permutation(len(points))
    return Vault(app_id, tuple(points[i] for i in order), sec, scheme.variant)


def serialize_vault(v: Vault) -> bytes:
    doc = {
        "format_version": v.format_version,
        "app_id": v.app_id,
        "n": v.sec.n,
        "c": v.sec.c,
        "d": v.sec.d,
        "scheme": v.scheme.value,
        "points": [{"x": p.x, "y": format(p.y, "x"), "label": p.label} for p in v.points],
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def _int_field(doc: dict, name: str) -> int:
    value = doc.get(name)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{name!r} must be an integer")
    return value


def deserialize_vault(data: bytes | str) -> Vault:
    """Parse and validate a vault document.

    Raises:
        VersionMismatch: ``format_version`` is not one this code writes.
        SchemaError: anything else structurally wrong.
    """
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"vault is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("vault must be a JSON object")
    version = _int_field(doc, "format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"vault format {version}, this build reads {FORMAT_VERSION}")
    app_id = doc.get("app_id")
    if not isinstance(app_id, str):
        raise SchemaError("'app_id' must be a string")
    try:
        sec = SecurityParams(_int_field(doc, "n"), _int_field(doc, "c"), _int_field(doc, "d"))
        scheme = Variant(doc.get("scheme"))
    except (InvalidParams, ValueError) as exc:
        raise SchemaError(str(exc)) from None
    raw_points = doc.get("points")
    if not isinstance(raw_points, list):
        raise SchemaError("'points' must be a list")
    points = []
    for i, rp in enumerate(raw_points):
        if not isinstance(rp, dict) or set(rp) != {"x", "y", "label"}:
            raise SchemaError(f"point {i}: expected keys x, y, label")
        label = rp["label"]
        if scheme is Variant.PER_FEATURE:
            if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < sec.n:
                raise SchemaError(f"point {i}: per-feature vaults need a feature label")
        elif label is not None:
            raise SchemaError(f"point {i}: label only allowed in per-feature vaults")
        y = rp["y"]
        try:
            y_val = int(y, 16)
            if y != format(y_val, "x"):
                raise ValueError("y must be canonical lowercase hex")
            points.append(VaultPoint(_int_field(rp, "x"), y_val, label))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"point {i}: {exc}") from None
    if len({(p.x, p.label) for p in points}) != len(points):
        raise SchemaError("two points share the same (x, label)")
    if scheme is Variant.PER_FEATURE:
        if len(points) != sec.n + sec.n * sec.c:
            raise SchemaError(f"per-feature vault should hold {sec.n * (1 + sec.c)} points")
    elif not sec.c + sec.d + 1 <= len(points) <= sec.n + sec.c:
        raise SchemaError(f"vault holds {len(points)} points, outside [{sec.c + sec.d + 1}, {sec.n + sec.c}]")
    return Vault(app_id, tuple(points), sec, scheme, version)
