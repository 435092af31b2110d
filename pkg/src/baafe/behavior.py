"""Behavior data: JSONL ingestion, windowed statistics and a synthetic generator.

Every application is described by 14 daily attribute series.  A 15-day
window of those series is summarised into 56 features (mean, population
standard deviation, median and 75th percentile per attribute).
"""

from __future__ import annotations

import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from baafe.errors import GapError, InsufficientData, MissingAttribute, ParseError

ATTRIBUTES = (
    "unique_urls",
    "unique_url_categories",
    "bytes_received",
    "bytes_sent",
    "http_requests",
    "ssl_requests",
    "proxy_auth_failures",
    "http_200_responses",
    "fw_allowed",
    "fw_denied",
    "outgoing_connections",
    "unique_destinations",
    "unique_source_ports",
    "siem_requests",
)
STATISTICS = ("mean", "std", "p50", "p75")
N_FEATURES = len(ATTRIBUTES) * len(STATISTICS)
WINDOW_DAYS = 15
DEFAULT_START = dt.date(2021, 1, 1)


@dataclass(frozen=True)
class AttributeSeries:
    attribute_id: str
    dates: tuple[dt.date, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.attribute_id not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {self.attribute_id!r}")
        values = np.asarray(self.values, dtype=float)
        if len(values) != len(self.dates):
            raise ValueError("dates and values differ in length")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError(f"{self.attribute_id}: values must be finite and >= 0")
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise ValueError(f"{self.attribute_id}: dates must be strictly increasing")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class BehaviorWindow:
    app_id: str
    start_date: dt.date
    series: Mapping[str, np.ndarray]
    length_days: int = WINDOW_DAYS

    def __post_init__(self):
        missing = [a for a in ATTRIBUTES if a not in self.series]
        if missing:
            raise MissingAttribute(f"{self.app_id}: window lacks {missing}")
        for name, vals in self.series.items():
            if len(vals) != self.length_days:
                raise InsufficientData(
                    f"{self.app_id}/{name}: {len(vals)} days in a {self.length_days}-day window"
                )


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class AttributeProfile:
    base_level: float
    daily_noise_sd: float = 0.0
    weekly_amplitude: float = 0.0
    drift_per_day: float = 0.0

    def __post_init__(self):
        if self.base_level < 0 or self.daily_noise_sd < 0:
            raise ValueError("base_level and daily_noise_sd must be >= 0")


@dataclass(frozen=True)
class AppProfile:
    app_id: str
    attributes: Mapping[str, AttributeProfile]
    seed: int = 0

    def __post_init__(self):
        missing = [a for a in ATTRIBUTES if a not in self.attributes]
        if missing:
            raise MissingAttribute(f"profile {self.app_id} lacks {missing}")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "AppProfile":
        return cls(
            app_id=raw["app_id"],
            seed=int(raw.get("seed", 0)),
            attributes={k: AttributeProfile(**v) for k, v in raw["attributes"].items()},
        )

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "seed": self.seed,
            "attributes": {
                k: {
                    "base_level": p.base_level,
                    "daily_noise_sd": p.daily_noise_sd,
                    "weekly_amplitude": p.weekly_amplitude,
                    "drift_per_day": p.drift_per_day,
                }
                for k, p in self.attributes.items()
            },
        }


Dataset = dict[str, dict[str, AttributeSeries]]


def _parse_row(line: str, lineno: int) -> tuple[str, str, dt.date, float]:
    try:
        row = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(row, dict):
        raise ParseError("expected a JSON object", lineno)
    try:
        app_id, attribute, date, value = row["app_id"], row["attribute"], row["date"], row["value"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", lineno) from None
    if not isinstance(app_id, str) or not app_id:
        raise ParseError("app_id must be a nonempty string", lineno)
    if attribute not in ATTRIBUTES:
        raise ParseError(f"unknown attribute {attribute!r}", lineno)
    try:
        day = dt.date.fromisoformat(date)
    except (TypeError, ValueError):
        raise ParseError(f"bad date {date!r}", lineno) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError("value must be a number", lineno)
    if not math.isfinite(value) or value < 0:
        raise ParseError(f"value must be finite and >= 0, got {value}", lineno)
    return app_id, attribute, day, float(value)


def ingest(path: str | Path) -> Dataset:
    """Read a behavior JSONL file into ``{app_id: {attribute: series}}``.

    Raises:
        ParseError: malformed row or duplicated (app, attribute, date).
        MissingAttribute: an app lacks one of the 14 attributes.
        GapError: an attribute's dates are not consecutive.
    """
    rows: dict[str, dict[str, dict[dt.date, float]]] = defaultdict(lambda: defaultdict(dict))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            app_id, attribute, day, value = _parse_row(line, lineno)
            bucket = rows[app_id][attribute]
            if day in bucket:
                raise ParseError(f"duplicate row for {app_id}/{attribute} on {day}", lineno)
            bucket[day] = value

    dataset: Dataset = {}
    for app_id in sorted(rows):
        per_attr = rows[app_id]
        missing = [a for a in ATTRIBUTES if a not in per_attr]
        if missing:
            raise MissingAttribute(f"{app_id}: missing attributes {missing}")
        series = {}
        for attribute in ATTRIBUTES:
            days = sorted(per_attr[attribute])
            for a, b in zip(days, days[1:]):
                if (b - a).days != 1:
                    raise GapError(f"{app_id}/{attribute}: gap between {a} and {b}")
            series[attribute] = AttributeSeries(
                attribute, tuple(days), np.array([per_attr[attribute][d] for d in days])
            )
        dataset[app_id] = series
    return dataset


def _percentile(sorted_vals: np.ndarray, q: float) -> float:
    # linear interpolation between closest ranks
    pos = (len(sorted_vals) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    frac = pos - lo
    return float(sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * frac)


def window_features(w: BehaviorWindow) -> FeatureVector:
    """56 statistics, attribute-major: ``[mean, std, p50, p75]`` per attribute."""
    out = []
    for attribute in ATTRIBUTES:
        vals = np.asarray(w.series[attribute], dtype=float)
        mean = float(vals.mean())
        std = float(np.sqrt(np.mean((vals - mean) ** 2)))
        ordered = np.sort(vals)
        out.extend((mean, std, _percentile(ordered, 0.5), _percentile(ordered, 0.75)))
    return FeatureVector(np.array(out))


def slide_windows(
    series: Mapping[str, AttributeSeries],
    window_days: int = WINDOW_DAYS,
    step_days: int = 1,
    app_id: str = "",
) -> list[BehaviorWindow]:
    """Cut one app's series into overlapping windows, oldest first."""
    missing = [a for a in ATTRIBUTES if a not in series]
    if missing:
        raise MissingAttribute(f"{app_id}: missing attributes {missing}")
    first = series[ATTRIBUTES[0]]
    for attribute in ATTRIBUTES[1:]:
        if series[attribute].dates != first.dates:
            raise GapError(f"{app_id}: attribute {attribute} covers different dates")
    n_days = len(first)
    if n_days < window_days:
        raise InsufficientData(f"{app_id}: {n_days} days < {window_days}-day window")
    windows = []
    for start in range(0, n_days - window_days + 1, step_days):
        windows.append(
            BehaviorWindow(
                app_id=app_id,
                start_date=first.dates[start],
                length_days=window_days,
                series={a: series[a].values[start : start + window_days] for a in ATTRIBUTES},
            )
        )
    return windows


def app_windows(dataset: Dataset, app_id: str, window_days: int = WINDOW_DAYS) -> list[BehaviorWindow]:
    return slide_windows(dataset[app_id], window_days, 1, app_id=app_id)


def synth_series(profile: AppProfile, days: int) -> dict[str, np.ndarray]:
    """Daily values per attribute for one profile (deterministic in its seed)."""
    rng = np.random.default_rng(profile.seed)
    day = np.arange(days, dtype=float)
    out = {}
    for attribute in ATTRIBUTES:
        p = profile.attributes[attribute]
        noise = rng.normal(0.0, 1.0, size=days) * p.daily_noise_sd
        trend = p.base_level * (1.0 + p.drift_per_day * day)
        season = p.weekly_amplitude * np.sin(2.0 * np.pi * day / 7.0)
        out[attribute] = np.maximum(0.0, trend + season + noise)
    return out


def synth_generate(
    profiles: Sequence[AppProfile], days: int, start: dt.date = DEFAULT_START
) -> list[dict]:
    """Behavior JSONL rows for every profile, app-major then attribute then date."""
    if days < WINDOW_DAYS:
        raise InsufficientData(f"need at least {WINDOW_DAYS} days, got {days}")
    rows = []
    dates = [(start + dt.timedelta(days=i)).isoformat() for i in range(days)]
    for profile in profiles:
        values = synth_series(profile, days)
        for attribute in ATTRIBUTES:
            for date, value in zip(dates, values[attribute]):
                rows.append(
                    {"app_id": profile.app_id, "attribute": attribute, "date": date, "value": float(value)}
                )
    return rows


def synth_dataset(
    profiles: Sequence[AppProfile], days: int, start: dt.date = DEFAULT_START
) -> Dataset:
    """Same data as :func:`synth_generate`, already in ingested form."""
    if days < WINDOW_DAYS:
        raise InsufficientData(f"need at least {WINDOW_DAYS} days, got {days}")
    dates = tuple(start + dt.timedelta(days=i) for i in range(days))
    dataset: Dataset = {}
    for profile in profiles:
        values = synth_series(profile, days)
        dataset[profile.app_id] = {a: AttributeSeries(a, dates, values[a]) for a in ATTRIBUTES}
    return dataset


def write_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def load_profiles(path: str | Path) -> list[AppProfile]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        raw = raw["profiles"]
    return [AppProfile.from_dict(p) for p in raw]
