"""FAR/FRR sweeps, timing runs and brute-force estimates.

Each app is enrolled on its first 15-day window, then the following sliding
windows (one-day steps) are authenticated against that vault.  FRR counts the app's own
rejected windows; FAR counts other apps' windows that unlock its vault.

Normalisation is fitted once over every app's windows (a fleet-wide MinMax
scaler) so that one app's within-app noise is small next to the spread
between apps.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import statistics
import time
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from baafe.behavior import (
    N_FEATURES,
    Dataset,
    FeatureVector,
    app_windows,
    ingest,
    load_profiles,
    synth_dataset,
    window_features,
)
from baafe.encoder import EncoderParams, NormalizationParams, gen_encoder_params
from baafe.errors import BaafeError, InsufficientData
from baafe.extractor import FERecord, authenticate, enroll_behavior, fit_normalization, fit_scheme
from baafe.ffmath import KeyMaterial, key_capacity
from baafe.reconstruct import DEFAULT_MAX_ATTEMPTS, CandidateSet, reconstruct_key
from baafe.thresholds import DEFAULT_GLOBAL_TAU, ThresholdScheme, Variant
from baafe.vault import SecurityParams, Vault, VaultPoint

log = logging.getLogger(__name__)

DEFAULT_DEGREES = (8, 24, 32, 40, 48)
DEFAULT_CHAFF = (100, 200, 400, 800, 1600)
AUTH_WINDOWS = 15


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    profiles: str | None = None
    days: int = 30
    apps: list[str] | None = None
    degrees: list[int] = field(default_factory=lambda: [32])
    chaff_counts: list[int] = field(default_factory=lambda: [200])
    schemes: list[str] = field(default_factory=lambda: ["global"])
    taus: list[float] = field(default_factory=lambda: [DEFAULT_GLOBAL_TAU])
    divisors: list[float] | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    repetitions: int = 1
    n: int = N_FEATURES
    auth_windows: int = AUTH_WINDOWS
    reenroll_every: int | None = None
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    key_octets: int = 32
    record_timing: bool = True

    def __post_init__(self):
        for name in ("degrees", "chaff_counts", "schemes", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"config field {name!r} must be a nonempty list")
        if self.divisors is not None and not self.divisors:
            raise ValueError("config field 'divisors' must be nonempty when given")
        if "global" in self.schemes and not self.taus:
            raise ValueError("global scheme needs at least one tau")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**raw)
        base = Path(path).parent
        for name in ("dataset", "profiles"):
            value = getattr(cfg, name)
            if value and not Path(value).is_absolute():
                setattr(cfg, name, str(base / value))
        return cfg


@dataclass
class MetricsRow:
    app: str
    scheme: str
    scheme_param: float
    degree: int
    chaff: int
    seed: int
    frr: float | None
    far: float | None
    frr_attempts: int
    far_attempts: int
    mean_enroll_ms: float | None
    mean_auth_success_ms: float | None
    mean_auth_fail_ms: float | None
    mean_attempts_used: float
    max_attempts_used: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def sort_key(self):
        return (self.app, self.scheme, self.scheme_param, self.degree, self.chaff, self.seed)


@dataclass(frozen=True)
class SchemeSpec:
    variant: Variant
    param: float  # tau for global, divisor otherwise


@dataclass
class Tally:
    accepted: int = 0
    attempts: int = 0
    enroll_ms: list[float] = field(default_factory=list)
    success_ms: list[float] = field(default_factory=list)
    fail_ms: list[float] = field(default_factory=list)
    attempts_used: list[int] = field(default_factory=list)

    @property
    def rate(self) -> float | None:
        return None if self.attempts == 0 else self.accepted / self.attempts


def _stable_seed(*parts) -> int:
    return zlib.crc32("/".join(str(p) for p in parts).encode()) & 0x7FFFFFFF


class Experiment:
    """Dataset plus everything derived from it that sweeps reuse."""

    def __init__(
        self,
        dataset: Dataset,
        *,
        n: int = N_FEATURES,
        apps: Sequence[str] | None = None,
        key_octets: int = 32,
    ):
        self.dataset = dataset
        self.n = n
        self.key_octets = key_octets
        self.apps = list(apps) if apps else sorted(dataset)
        missing = set(self.apps) - set(dataset)
        if missing:
            raise KeyError(f"apps not in dataset: {sorted(missing)}")
        self.features: dict[str, list[FeatureVector]] = {
            app: [window_features(w) for w in app_windows(dataset, app)] for app in dataset
        }
        fleet = [fv for app in sorted(dataset) for fv in self.features[app]]
        self.normalization: NormalizationParams = fit_normalization(fleet, n)
        self._encoders: dict[tuple[str, int], EncoderParams] = {}

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Experiment":
        return cls(load_dataset(cfg), n=cfg.n, apps=cfg.apps, key_octets=cfg.key_octets)

    def encoder(self, app: str, seed: int) -> EncoderParams:
        key = (app, seed)
        if key not in self._encoders:
            self._encoders[key] = gen_encoder_params(_stable_seed("encoder", app, seed), self.n)
        return self._encoders[key]

    def scheme(self, app: str, spec: SchemeSpec, seed: int) -> ThresholdScheme:
        if spec.variant is Variant.GLOBAL:
            return fit_scheme(spec.variant, [], self.encoder(app, seed), self.normalization, tau=spec.param)
        return fit_scheme(
            spec.variant,
            self.features[app],
            self.encoder(app, seed),
            self.normalization,
            divisor=spec.param,
        )

    def enroll(
        self, app: str, window_index: int, sec: SecurityParams, scheme: ThresholdScheme, seed: int
    ) -> tuple[Vault, FERecord, float]:
        rng = np.random.default_rng(_stable_seed("enroll", app, window_index, sec, seed))
        # small degrees cannot carry a full-size key
        key = KeyMaterial(rng.bytes(min(self.key_octets, key_capacity(sec.d))))
        encoder = self.encoder(app, seed)
        t0 = time.perf_counter()
        vault, record = enroll_behavior(
            app,
            self.features[app][window_index],
            key,
            sec,
            scheme,
            encoder,
            self.normalization,
            seed=rng,
        )
        return vault, record, (time.perf_counter() - t0) * 1e3

    def auth_indices(self, app: str, count: int) -> list[int]:
        available = len(self.features[app]) - 1
        if available < count:
            raise InsufficientData(
                f"{app}: {available} windows after enrollment, {count} required"
            )
        return list(range(1, count + 1))


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset:
        return ingest(cfg.dataset)
    if cfg.profiles:
        return synth_dataset(load_profiles(cfg.profiles), cfg.days)
    return synth_dataset(default_profiles(), cfg.days)


def default_profiles():
    from baafe.data import bundled_profiles

    return bundled_profiles()


def _record(tally: Tally, outcome, accepted_counts: bool = True) -> None:
    tally.attempts += 1
    tally.attempts_used.append(outcome.attempts_used)
    if outcome.success:
        tally.accepted += 1
        tally.success_ms.append(outcome.timings["total_ms"])
    else:
        tally.fail_ms.append(outcome.timings["total_ms"])


def _auth_seed(*parts) -> np.random.Generator:
    return np.random.default_rng(_stable_seed("auth", *parts))


def eval_frr(
    exp: Experiment,
    app: str,
    sec: SecurityParams,
    spec: SchemeSpec,
    *,
    seed: int = 0,
    auth_windows: int = AUTH_WINDOWS,
    reenroll_every: int | None = None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> Tally:
    """Authenticate the app's own later windows; FRR = 1 - tally.rate.

    With ``reenroll_every = r`` the app re-enrolls on every r-th window and
    each window is checked against the most recent enrollment before it.
    """
    indices = exp.auth_indices(app, auth_windows)
    scheme = exp.scheme(app, spec, seed)
    tally = Tally()
    enrolled: dict[int, tuple[Vault, FERecord] | None] = {}
    for i in indices:
        base = 0 if not reenroll_every else ((i - 1) // reenroll_every) * reenroll_every
        if base not in enrolled:
            try:
                vault, record, ms = exp.enroll(app, base, sec, scheme, seed)
                tally.enroll_ms.append(ms)
                enrolled[base] = (vault, record)
            except BaafeError as exc:
                log.warning("enrollment of %s at window %d failed: %s", app, base, exc)
                enrolled[base] = None
        if enrolled[base] is None:
            tally.attempts += 1
            continue
        vault, record = enrolled[base]
        outcome = authenticate(
            exp.features[app][i], vault, record, max_attempts=max_attempts, seed=_auth_seed(app, i, seed)
        )
        _record(tally, outcome)
    return tally


def eval_far(
    exp: Experiment,
    target: str,
    others: Sequence[str],
    sec: SecurityParams,
    spec: SchemeSpec,
    *,
    seed: int = 0,
    auth_windows: int = AUTH_WINDOWS,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    per_app: dict | None = None,
) -> Tally:
    """Authenticate every other app's windows against ``target``'s vault.

    ``per_app``, when given, receives the acceptance count per impostor.
    """
    tally = Tally()
    others = [o for o in others if o != target]
    if not others:
        return tally
    scheme = exp.scheme(target, spec, seed)
    try:
        vault, record, ms = exp.enroll(target, 0, sec, scheme, seed)
    except BaafeError as exc:
        log.warning("enrollment of %s failed: %s", target, exc)
        tally.attempts += sum(len(exp.auth_indices(o, auth_windows)) for o in others)
        return tally
    tally.enroll_ms.append(ms)
    for other in others:
        hits = 0
        for i in exp.auth_indices(other, auth_windows):
            outcome = authenticate(
                exp.features[other][i],
                vault,
                record,
                max_attempts=max_attempts,
                seed=_auth_seed(target, other, i, seed),
            )
            _record(tally, outcome)
            hits += outcome.success
        if per_app is not None:
            per_app[other] = hits
    return tally


def scheme_specs(cfg: ExperimentConfig) -> list[SchemeSpec]:
    specs = []
    for name in cfg.schemes:
        variant = Variant(name)
        if variant is Variant.GLOBAL:
            specs.extend(SchemeSpec(variant, float(t)) for t in cfg.taus)
        else:
            default = 3.0 if variant is Variant.PER_APP else 2.0
            specs.extend(SchemeSpec(variant, float(dv)) for dv in (cfg.divisors or [default]))
    return specs


def _mean(values: Sequence[float]) -> float | None:
    return statistics.fmean(values) if values else None


def evaluate_point(
    exp: Experiment, cfg: ExperimentConfig, app: str, spec: SchemeSpec, d: int, c: int, seed: int
) -> MetricsRow:
    sec = SecurityParams(cfg.n, c, d)
    kw = dict(seed=seed, auth_windows=cfg.auth_windows, max_attempts=cfg.max_attempts)
    frr_t = eval_frr(exp, app, sec, spec, reenroll_every=cfg.reenroll_every, **kw)
    far_t = eval_far(exp, app, exp.apps, sec, spec, **kw)
    used = frr_t.attempts_used + far_t.attempts_used
    timing = cfg.record_timing
    frr_rate = frr_t.rate
    return MetricsRow(
        app=app,
        scheme=spec.variant.value,
        scheme_param=spec.param,
        degree=d,
        chaff=c,
        seed=seed,
        frr=None if frr_rate is None else 1.0 - frr_rate,
        far=far_t.rate,
        frr_attempts=frr_t.attempts,
        far_attempts=far_t.attempts,
        mean_enroll_ms=_mean(frr_t.enroll_ms + far_t.enroll_ms) if timing else None,
        mean_auth_success_ms=_mean(frr_t.success_ms + far_t.success_ms) if timing else None,
        mean_auth_fail_ms=_mean(frr_t.fail_ms + far_t.fail_ms) if timing else None,
        mean_attempts_used=statistics.fmean(used) if used else 0.0,
        max_attempts_used=max(used, default=0),
    )


_WORKER_EXP: Experiment | None = None


def _init_worker(exp: Experiment) -> None:
    global _WORKER_EXP
    _WORKER_EXP = exp


def _run_point(args) -> MetricsRow:
    return evaluate_point(_WORKER_EXP, *args)


def sweep(cfg: ExperimentConfig, exp: Experiment | None = None, *, workers: int = 1) -> list[MetricsRow]:
    """One row per (app, scheme setting, degree, chaff count, seed), sorted.

    Grid points are independent and seed themselves, so ``workers > 1``
    spreads them over processes without changing the result.
    """
    exp = exp or Experiment.from_config(cfg)
    grid = [
        (cfg, app, spec, d, c, seed)
        for app in exp.apps
        for spec in scheme_specs(cfg)
        for d in cfg.degrees
        for c in cfg.chaff_counts
        for seed in cfg.seeds
    ]
    if workers > 1 and len(grid) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(exp,)) as pool:
            rows = list(pool.map(_run_point, grid))
    else:
        rows = [evaluate_point(exp, *point) for point in grid]
    rows.sort(key=MetricsRow.sort_key)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(round(value, 6))
    return str(value)


def rows_to_csv(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MetricsRow.columns())
    for row in rows:
        writer.writerow([_fmt(getattr(row, c)) for c in MetricsRow.columns()])
    return buf.getvalue()


# -- brute-force security ----------------------------------------------------


@dataclass(frozen=True)
class BruteForceEstimate:
    paper_expected_attempts: Fraction | None
    corrected_expected_attempts: Fraction | None
    total_combinations: int
    valid_combinations: int

    @property
    def reachable(self) -> bool:
        return self.valid_combinations > 0

    def years_at(self, seconds_per_attempt: float, *, which: str = "paper") -> float:
        attempts = self.paper_expected_attempts if which == "paper" else self.corrected_expected_attempts
        if attempts is None:
            return math.inf
        return float(attempts) * seconds_per_attempt / (365.25 * 24 * 3600)


def _per_feature_sum(counts: Sequence[int], k: int) -> int:
    # elementary symmetric polynomial e_k(counts) by dynamic programming
    e = [1] + [0] * k
    for value in counts:
        for j in range(k, 0, -1):
            e[j] += e[j - 1] * value
    return e[k]


def estimate_bruteforce(
    sec: SecurityParams | tuple[int, int, int],
    scheme: Variant | str = Variant.GLOBAL,
    per_feature_counts: Sequence[int] | None = None,
    n_distinct: int | None = None,
) -> BruteForceEstimate:
    """Expected online guesses for an attacker interpolating random vault subsets.

    Two figures are reported.  ``paper_expected_attempts`` is half the
    number of ``(d + 1)``-subsets; the corrected one is the exact expectation when
    drawing without replacement until the first all-genuine subset,
    ``(N + 1) / (K + 1)`` with ``K = C(n_distinct, d + 1)`` winning subsets.

    For the per-feature layout, ``per_feature_counts[i]`` is the number of
    points labelled ``i`` (genuine plus chaff); an attacker takes one point
    from each of ``d + 1`` distinct labels.
    """
    n, c, d = (sec.n, sec.c, sec.d) if isinstance(sec, SecurityParams) else sec
    k = d + 1
    genuine = n if n_distinct is None else n_distinct
    if Variant(scheme) is Variant.PER_FEATURE:
        counts = list(per_feature_counts) if per_feature_counts is not None else [1 + c] * n
        total = _per_feature_sum(counts, k)
        valid = math.comb(len(counts), k)
    else:
        total = math.comb(n + c, k)
        valid = math.comb(genuine, k)
    if total == 0 or valid == 0:
        return BruteForceEstimate(None, None, total, valid)
    return BruteForceEstimate(Fraction(total, 2), Fraction(total + 1, valid + 1), total, valid)


def monte_carlo_attack(
    n: int, c: int, d: int, trials: int, seed=0, *, exhaustive: bool = False
) -> float:
    """Mean attempts until an attacker's random subset is all-genuine.

    Builds a real vault (random key, chaff off the curve) and checks each
    candidate subset by interpolating and comparing key hashes.  With
    ``exhaustive=True`` every ordering of the subset space is averaged
    exactly instead of sampled, which is only feasible for tiny vaults.
    """
    from baafe.ffmath import coeffs_to_key, key_to_coeffs, lagrange_interpolate, poly_eval
    from baafe.errors import MalformedShares

    k = d + 1
    total = math.comb(n + c, k)
    if total >= 10**6:
        raise ValueError("vault too large for simulation")
    rng = np.random.default_rng(seed)
    key = KeyMaterial(rng.bytes(min(8, (k * 7) - 2)))
    P = key_to_coeffs(key, d)
    xs = rng.choice(65536, size=n + c, replace=False)
    points = []
    for i, x in enumerate(xs.tolist()):
        y = poly_eval(P, x)
        if i >= n:
            y = (y + 1 + int(rng.integers(0, 1 << 60))) % ((1 << 61) - 1)
        points.append((x, y))
    subsets = list(combinations(range(n + c), k))
    hits = []
    for s in subsets:
        poly = lagrange_interpolate([points[i] for i in s], d)
        try:
            hits.append(coeffs_to_key(poly).hash == key.hash)
        except MalformedShares:
            hits.append(False)
    hits = np.array(hits)

    if exhaustive:
        from itertools import permutations

        if total > 8:
            raise ValueError("exhaustive enumeration limited to 8 subsets")
        firsts = [next(i for i, s in enumerate(order, 1) if hits[s]) for order in permutations(range(total))]
        return statistics.fmean(firsts)

    results = []
    for _ in range(trials):
        order = rng.permutation(total)
        first = int(np.argmax(hits[order])) + 1
        results.append(first)
    return statistics.fmean(results)


def measure_attempt_seconds(sec: SecurityParams, *, attempts: int = 2000, seed=0) -> float:
    """Wall-clock seconds per subset guess against a vault of this shape.

    The guesses run through the same search the FE uses, on ``n`` points of
    a random vault that contains no valid subset.
    """
    rng = np.random.default_rng(seed)
    xs = rng.choice(65536, size=sec.n, replace=False)
    ys = rng.integers(0, (1 << 61) - 1, size=sec.n)
    cands = CandidateSet(tuple(VaultPoint(int(x), int(y)) for x, y in zip(xs, ys)))
    t0 = time.perf_counter()
    outcome = reconstruct_key(cands, sec, bytes(32), max_attempts=attempts, seed=rng)
    elapsed = time.perf_counter() - t0
    return elapsed / max(outcome.attempts_used, 1)


# -- timing --------------------------------------------------------------------


@dataclass
class TimingRow:
    kind: str
    degree: int
    chaff: int
    mean_ms: float
    runs: int
    median_ms: float = math.nan


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot else 1.0
    return float(slope), float(intercept), r2


def measure_timing(
    exp: Experiment,
    apps: Sequence[str],
    *,
    chaff_counts: Sequence[int] = DEFAULT_CHAFF,
    degrees: Sequence[int] = DEFAULT_DEGREES,
    base_d: int = 32,
    base_c: int = 200,
    repetitions: int = 5,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    tau: float = DEFAULT_GLOBAL_TAU,
) -> list[TimingRow]:
    """Mean and median wall-clock times for enrollment, successful and failed authentication.

    A failed authentication here runs the full attempt budget: the candidate
    set is ``n`` chaff points of the app's vault, which is what a foreign
    behavior sitting on chaff produces.
    """
    rows = []
    spec = SchemeSpec(Variant.GLOBAL, tau)

    def enroll_rows(points: list[tuple[int, int]]) -> list[TimingRow]:
        # round-robin over the points so a slow spell on the host is shared
        times: dict[tuple[int, int], list[float]] = {pt: [] for pt in points}
        schemes = {app: exp.scheme(app, spec, 0) for app in apps}
        for r in range(repetitions):
            for d, c in points:
                for app in apps:
                    _, _, ms = exp.enroll(app, 0, SecurityParams(exp.n, c, d), schemes[app], r)
                    times[(d, c)].append(ms)
        return [
            TimingRow("enroll", d, c, statistics.fmean(t), len(t), statistics.median(t))
            for (d, c), t in times.items()
        ]

    rows += enroll_rows([(base_d, c) for c in chaff_counts] + [(d, base_c) for d in degrees])

    for d in degrees:
        sec = SecurityParams(exp.n, base_c, d)
        ok_times, fail_times = [], []
        for app in apps:
            scheme = exp.scheme(app, spec, 0)
            vault, record, _ = exp.enroll(app, 0, sec, scheme, 0)
            genuine_x = set(
                encode_codes(exp, app, 0)
            )
            chaff = [p for p in vault.points if p.x not in genuine_x]
            for r in range(repetitions):
                outcome = authenticate(exp.features[app][0], vault, record, seed=r, max_attempts=max_attempts)
                if outcome.success:
                    ok_times.append(outcome.timings["total_ms"])
                pick = np.random.default_rng(r).choice(len(chaff), size=exp.n, replace=False)
                cands = CandidateSet(tuple(chaff[i] for i in pick))
                t0 = time.perf_counter()
                reconstruct_key(cands, sec, record.key_hash, max_attempts=max_attempts, seed=r)
                fail_times.append((time.perf_counter() - t0) * 1e3)
        if ok_times:
            rows.append(
                TimingRow("auth_success", d, base_c, statistics.fmean(ok_times), len(ok_times), statistics.median(ok_times))
            )
        rows.append(
            TimingRow("auth_fail", d, base_c, statistics.fmean(fail_times), len(fail_times), statistics.median(fail_times))
        )
    return rows


def encode_codes(exp: Experiment, app: str, window_index: int, seed: int = 0) -> tuple[int, ...]:
    from baafe.extractor import encode_window

    return encode_window(exp.features[app][window_index], exp.encoder(app, seed), exp.normalization).codes
