"""Noise-tolerance policies: one global threshold, one per app, or one per feature."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from baafe.encoder import EncodedVector
from baafe.errors import NonPositive, ZeroSpread

DEFAULT_GLOBAL_TAU = 57.5
DEFAULT_PER_APP_DIVISOR = 3.0
DEFAULT_PER_FEATURE_DIVISOR = 2.0
ZERO_SPREAD_FLOOR = 1.0


class Variant(str, enum.Enum):
    GLOBAL = "global"
    PER_APP = "per_app"
    PER_FEATURE = "per_feature"


@dataclass(frozen=True)
class ThresholdScheme:
    variant: Variant
    tau: float | tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.PER_FEATURE:
            taus = tuple(float(t) for t in self.tau)
            if not taus:
                raise ValueError("per-feature scheme needs at least one threshold")
            object.__setattr__(self, "tau", taus)
            if min(taus) <= 0:
                raise NonPositive("every threshold must be > 0")
        else:
            object.__setattr__(self, "tau", float(self.tau))
            if not self.tau > 0:
                raise NonPositive(f"threshold must be > 0, got {self.tau}")

    @property
    def per_feature(self) -> bool:
        return self.variant is Variant.PER_FEATURE

    def tau_for(self, feature: int) -> float:
        return self.tau[feature] if self.per_feature else self.tau

    def to_dict(self) -> dict:
        tau = list(self.tau) if self.per_feature else self.tau
        return {"variant": self.variant.value, "tau": tau}

    @classmethod
    def from_dict(cls, raw: dict) -> "ThresholdScheme":
        return cls(Variant(raw["variant"]), raw["tau"])


@dataclass(frozen=True)
class CalibrationSet:
    encoded_history: tuple[EncodedVector, ...]

    def __post_init__(self):
        hist = tuple(self.encoded_history)
        if len(hist) < 2:
            raise ValueError("calibration needs at least two encoded vectors")
        if len({len(h) for h in hist}) != 1:
            raise ValueError("encoded vectors differ in length")
        object.__setattr__(self, "encoded_history", hist)

    def spreads(self) -> np.ndarray:
        """Per-feature ``max - min`` over the history, in code space."""
        codes = np.array([h.codes for h in self.encoded_history], dtype=float)
        return codes.max(axis=0) - codes.min(axis=0)


def global_threshold(tau: float = DEFAULT_GLOBAL_TAU) -> ThresholdScheme:
    return ThresholdScheme(Variant.GLOBAL, tau)


def calibrate_per_app(cal: CalibrationSet, divisor: float = DEFAULT_PER_APP_DIVISOR) -> ThresholdScheme:
    """Largest per-feature spread divided by ``divisor``."""
    widest = float(cal.spreads().max())
    if widest == 0:
        raise ZeroSpread("every feature is constant over the calibration history")
    return ThresholdScheme(Variant.PER_APP, widest / divisor)


def calibrate_per_feature(
    cal: CalibrationSet, divisor: float = DEFAULT_PER_FEATURE_DIVISOR
) -> ThresholdScheme:
    """Each feature's spread divided by ``divisor``; constant features get a floor of 1."""
    spreads = cal.spreads()
    taus = np.where(spreads == 0, ZERO_SPREAD_FLOOR, spreads / divisor)
    return ThresholdScheme(Variant.PER_FEATURE, tuple(taus.tolist()))


def scheme_from_name(
    name: str,
    *,
    tau: float | None = None,
    divisor: float | None = None,
    calibration: CalibrationSet | None = None,
) -> ThresholdScheme:
    """Build a scheme by name; calibrated variants need ``calibration``."""
    variant = Variant(name)
    if variant is Variant.GLOBAL:
        return global_threshold(DEFAULT_GLOBAL_TAU if tau is None else tau)
    if calibration is None:
        raise ValueError(f"{variant.value} scheme needs a calibration history")
    if variant is Variant.PER_APP:
        return calibrate_per_app(calibration, DEFAULT_PER_APP_DIVISOR if divisor is None else divisor)
    return calibrate_per_feature(calibration, DEFAULT_PER_FEATURE_DIVISOR if divisor is None else divisor)


def spreads_of(history: Sequence[EncodedVector]) -> np.ndarray:
    return CalibrationSet(tuple(history)).spreads()
