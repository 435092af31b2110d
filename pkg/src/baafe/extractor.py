"""The fuzzy-extractor service's core logic, independent of any transport.

An :class:`FERecord` holds everything the service keeps private per app:
encoder matrices (as a seed), normalisation state, thresholds and the key
hash.  None of it ever appears in the public vault.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from baafe.behavior import BehaviorWindow, FeatureVector, window_features
from baafe.encoder import (
    EncodedVector,
    EncoderParams,
    NormalizationParams,
    calibrate_normalization,
    encode,
    normalize,
)
from baafe.errors import UnknownApp
from baafe.ffmath import KeyMaterial
from baafe.reconstruct import (
    DEFAULT_MAX_ATTEMPTS,
    AuthOutcome,
    match_candidates,
    reconstruct_key,
)
from baafe.thresholds import CalibrationSet, ThresholdScheme, Variant, scheme_from_name
from baafe.vault import SecurityParams, Vault, enroll


@dataclass(frozen=True)
class FERecord:
    app_id: str
    encoder: EncoderParams
    normalization: NormalizationParams
    scheme: ThresholdScheme
    key_hash: bytes

    @property
    def n(self) -> int:
        return self.encoder.n

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "encoder": self.encoder.to_dict(),
            "normalization": self.normalization.to_dict(),
            "scheme": self.scheme.to_dict(),
            "key_hash": self.key_hash.hex(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FERecord":
        return cls(
            app_id=raw["app_id"],
            encoder=EncoderParams.from_dict(raw["encoder"]),
            normalization=NormalizationParams.from_dict(raw["normalization"]),
            scheme=ThresholdScheme.from_dict(raw["scheme"]),
            key_hash=bytes.fromhex(raw["key_hash"]),
        )


def features_of(window: BehaviorWindow | FeatureVector, n: int) -> np.ndarray:
    fv = window if isinstance(window, FeatureVector) else window_features(window)
    return np.asarray(fv.values[:n], dtype=float)


def encode_window(
    window: BehaviorWindow | FeatureVector,
    encoder: EncoderParams,
    normalization: NormalizationParams,
) -> EncodedVector:
    return encode(normalize(features_of(window, encoder.n), normalization), encoder)


def fit_normalization(
    history: Sequence[BehaviorWindow | FeatureVector], n: int, scheme: str = "minmax"
) -> NormalizationParams:
    return calibrate_normalization([features_of(w, n) for w in history], scheme)


def fit_scheme(
    variant: Variant | str,
    history: Sequence[BehaviorWindow | FeatureVector],
    encoder: EncoderParams,
    normalization: NormalizationParams,
    *,
    tau: float | None = None,
    divisor: float | None = None,
) -> ThresholdScheme:
    """Threshold scheme for one app; calibrated variants encode ``history`` first."""
    variant = Variant(variant)
    cal = None
    if variant is not Variant.GLOBAL:
        cal = CalibrationSet(tuple(encode_window(w, encoder, normalization) for w in history))
    return scheme_from_name(variant.value, tau=tau, divisor=divisor, calibration=cal)


def enroll_behavior(
    app_id: str,
    window: BehaviorWindow | FeatureVector,
    key: KeyMaterial,
    sec: SecurityParams,
    scheme: ThresholdScheme,
    encoder: EncoderParams,
    normalization: NormalizationParams,
    seed=None,
) -> tuple[Vault, FERecord]:
    """Encode the enrollment window and lock ``key`` into a fresh vault."""
    encoded = encode_window(window, encoder, normalization)
    vault = enroll(encoded, key, sec, scheme, seed=seed, app_id=app_id)
    record = FERecord(app_id, encoder, normalization, scheme, key.hash)
    return vault, record


def authenticate(
    window: BehaviorWindow | FeatureVector,
    v: Vault,
    fe_record: FERecord | Mapping[str, FERecord],
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    seed=None,
) -> AuthOutcome:
    """Features -> normalise -> encode -> match -> reconstruct, with timings in ms.

    Raises:
        UnknownApp: no private record exists for ``v.app_id``.
    """
    if isinstance(fe_record, FERecord):
        record = fe_record if fe_record.app_id == v.app_id else None
    else:
        record = fe_record.get(v.app_id)
    if record is None:
        raise UnknownApp(f"no enrollment record for app {v.app_id!r}")

    t0 = time.perf_counter()
    probe = encode_window(window, record.encoder, record.normalization)
    t1 = time.perf_counter()
    cands = match_candidates(probe, v, record.scheme)
    t2 = time.perf_counter()
    outcome = reconstruct_key(cands, v.sec, record.key_hash, max_attempts=max_attempts, seed=seed)
    t3 = time.perf_counter()
    timings = {
        "encode_ms": (t1 - t0) * 1e3,
        "match_ms": (t2 - t1) * 1e3,
        "reconstruct_ms": (t3 - t2) * 1e3,
        "total_ms": (t3 - t0) * 1e3,
    }
    return AuthOutcome(outcome.key, outcome.attempts_used, outcome.reason, timings, outcome.q)
