"""Command-line entry point ``baafe``."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from fractions import Fraction
from pathlib import Path

from baafe.errors import BaafeError


def _fraction_text(value: Fraction | None) -> str | None:
    if value is None:
        return None
    return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


def _sci(value: Fraction | None) -> str | None:
    return None if value is None else f"{float(value):.4e}"


def cmd_serve(args) -> int:
    from baafe.protocol import serve

    srv = serve(args.role, args.bind, args.store, data=args.data, fe=args.fe)
    logging.getLogger("baafe").info("%s listening on %s", args.role, srv.address)
    print(f"{args.role} listening on {srv.address}", flush=True)

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.shutdown()
    return 0


def cmd_enroll(args) -> int:
    from baafe.protocol import EnrollParams, client_enroll

    params = EnrollParams(
        n=args.n, c=args.c, d=args.d, scheme=args.scheme, tau=args.tau, divisor=args.divisor, force=args.force
    )
    v = client_enroll(args.app, args.server, args.out, params=params)
    print(f"enrolled {args.app}: {len(v)} vault points written to {args.out}")
    return 0


def cmd_auth(args) -> int:
    from baafe.protocol import client_authenticate

    accepted = client_authenticate(args.app, args.vault, args.server)
    print("accepted" if accepted else "rejected")
    return 0 if accepted else 1


def cmd_evaluate(args) -> int:
    from baafe.evalharness import ExperimentConfig, rows_to_csv, sweep

    cfg = ExperimentConfig.from_json(args.config)
    rows = sweep(cfg, workers=args.workers)
    Path(args.out).write_text(rows_to_csv(rows), encoding="utf-8")
    print(f"{len(rows)} rows written to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    from baafe.evalharness import estimate_bruteforce, measure_attempt_seconds
    from baafe.vault import SecurityParams

    counts = None
    scheme = args.scheme
    if args.per_feature:
        raw = json.loads(Path(args.per_feature).read_text(encoding="utf-8"))
        counts = raw["counts"] if isinstance(raw, dict) else raw
        if not all(isinstance(x, int) and x > 0 for x in counts):
            raise ValueError("per-feature counts must be positive integers")
        scheme = "per_feature"
    sec = SecurityParams(args.n, args.c, args.d)
    est = estimate_bruteforce(sec, scheme, counts)
    spa = args.seconds_per_attempt
    if spa is None:
        spa = measure_attempt_seconds(sec)
    report = {
        "n": sec.n,
        "c": sec.c,
        "d": sec.d,
        "scheme": scheme,
        "total_combinations": est.total_combinations,
        "valid_combinations": est.valid_combinations,
        "reachable": est.reachable,
        "paper_expected_attempts": _fraction_text(est.paper_expected_attempts),
        "paper_expected_attempts_approx": _sci(est.paper_expected_attempts),
        "corrected_expected_attempts": _fraction_text(est.corrected_expected_attempts),
        "corrected_expected_attempts_approx": _sci(est.corrected_expected_attempts),
        "seconds_per_attempt": spa,
        "years_paper": est.years_at(spa) if est.reachable else None,
        "years_corrected": est.years_at(spa, which="corrected") if est.reachable else None,
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_gen_data(args) -> int:
    import datetime as dt

    from baafe.behavior import load_profiles, synth_generate, write_jsonl
    from baafe.data import bundled_profiles

    profiles = load_profiles(args.profiles) if args.profiles else bundled_profiles()
    start = dt.date.fromisoformat(args.start)
    rows = synth_generate(profiles, args.days, start)
    write_jsonl(rows, args.out)
    print(f"{len(rows)} rows for {len(profiles)} apps written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="baafe", description="Behavior-bound application key vaults.")
    p.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the authentication server or the FE service")
    s.add_argument("--role", choices=["server", "fe"], required=True)
    s.add_argument("--bind", required=True, metavar="HOST:PORT")
    s.add_argument("--store", required=True, help="registry (server) or record store (fe)")
    s.add_argument("--data", help="behavior JSONL the FE reads windows from")
    s.add_argument("--fe", metavar="HOST:PORT", help="where the server reaches the FE")
    s.set_defaults(func=cmd_serve)

    e = sub.add_parser("enroll", help="enroll an app and save its vault")
    e.add_argument("--app", required=True)
    e.add_argument("--server", required=True, metavar="HOST:PORT")
    e.add_argument("--out", required=True, help="vault file to write")
    e.add_argument("--n", type=int, default=56)
    e.add_argument("--c", type=int, default=200)
    e.add_argument("--d", type=int, default=32)
    e.add_argument("--scheme", choices=["global", "per_app", "per_feature"], default="global")
    e.add_argument("--tau", type=float, default=None, help="global threshold (default 57.5)")
    e.add_argument("--divisor", type=float, default=None, help="spread divisor for calibrated schemes")
    e.add_argument("--force", action="store_true", help="replace an existing enrollment")
    e.set_defaults(func=cmd_enroll)

    a = sub.add_parser("auth", help="authenticate an app; exit status 0 iff accepted")
    a.add_argument("--app", required=True)
    a.add_argument("--vault", required=True)
    a.add_argument("--server", required=True, metavar="HOST:PORT")
    a.set_defaults(func=cmd_auth)

    ev = sub.add_parser("evaluate", help="FAR/FRR sweep to CSV")
    ev.add_argument("--config", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--workers", type=int, default=1)
    ev.set_defaults(func=cmd_evaluate)

    es = sub.add_parser("estimate-security", help="expected brute-force effort")
    es.add_argument("--n", type=int, required=True)
    es.add_argument("--c", type=int, required=True)
    es.add_argument("--d", type=int, required=True)
    es.add_argument("--scheme", choices=["global", "per_app", "per_feature"], default="global")
    es.add_argument("--per-feature", metavar="counts.json", help="points per feature label")
    es.add_argument("--seconds-per-attempt", type=float, default=None, help="skip the latency measurement")
    es.set_defaults(func=cmd_estimate)

    g = sub.add_parser("gen-data", help="synthetic behavior JSONL from app profiles")
    g.add_argument("--profiles", help="profiles JSON (default: the bundled fleet)")
    g.add_argument("--days", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--start", default="2021-01-01")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (BaafeError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
