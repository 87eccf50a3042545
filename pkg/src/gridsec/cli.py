"""Command-line experiment driver.

Every report starts with ``#`` header lines (tool version, command, seed and
input hashes) and contains no timestamps, so equal inputs give identical bytes.
Exit codes: 0 success, 1 experiment failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, ids, lomos, mtd
from ._rng import subseed, substream
from .estimator import DEFAULT_CONFIDENCE, ResidualTester
from .fdi import random_stealthy_attack
from .gridcore import (CaseError, GridCase, InfeasibleError, IslandingError, MeasurementSet, UnobservableError,
                       build_measurement_matrix, bundled_case, case_digest, load_case)
from .netsim import ScenarioError, resolve_scenario
from .netsim import run as run_scenario

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2
BDD_STREAMS = ("clean", "gross", "stealthy")
DEFAULT_TRIALS = {"bdd": 1000, "mtd": 500}


class InputError(Exception):
    pass


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def header(command: str, seed: int, inputs: dict[str, str], **params) -> str:
    lines = [f"# gridsec {__version__}", f"# command: {command}", f"# seed: {seed}"]
    for k, v in params.items():
        lines.append(f"# {k}: {v}")
    for name, digest in inputs.items():
        lines.append(f"# input {name} sha256={digest}")
    return "\n".join(lines) + "\n"


def _load_case(ref: str) -> tuple[GridCase, str]:
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise InputError(f"case file {ref!r} not found")
        return load_case(p), hashlib.sha256(p.read_bytes()).hexdigest()
    try:
        case = bundled_case(ref)
    except FileNotFoundError:
        raise InputError(f"unknown case {ref!r} (not a file or bundled case)") from None
    return case, case_digest(case)


def _load_measurements(ref: str | None, case: GridCase, sigma: float) -> tuple[MeasurementSet, str]:
    if ref is None:
        ms = MeasurementSet.all_flows_and_injections(case, sigma)
        return ms, _sha256_text(json.dumps(ms.to_dict(), sort_keys=True))
    p = Path(ref)
    if not p.exists():
        raise InputError(f"measurement file {ref!r} not found")
    try:
        return MeasurementSet.from_dict(json.loads(p.read_text()), sigma), hashlib.sha256(p.read_bytes()).hexdigest()
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{ref}: invalid measurement set ({exc})") from None


# -- experiments ------------------------------------------------------------------

def cmd_bdd(case: GridCase, ms: MeasurementSet, trials: int = 1000, p: float = DEFAULT_CONFIDENCE, seed: int = 0,
            noise_scale: float = 1.0, gross_sigmas: float = 10.0, stealthy_magnitude: float = 0.05,
            streams: Sequence[str] = BDD_STREAMS) -> list[dict]:
    """Flag rates of the chi-squared detector on clean, gross-error and stealthy streams.

    Noise is Gaussian with standard deviation ``noise_scale * sigma_i``. The gross
    stream adds ``gross_sigmas * sigma_i`` to one random measurement per trial.
    """
    H = build_measurement_matrix(case, ms)
    sig = ms.sigmas
    tester = ResidualTester(H, sig, p)
    z0 = H @ mtd.operating_state(case)
    m, n = H.shape
    rows = []
    for name in streams:
        rng = np.random.default_rng(substream(seed, "bdd", name))
        Z = z0 + noise_scale * sig * rng.standard_normal((trials, m))
        if name == "gross":
            idx = rng.integers(0, m, size=trials)
            sign = rng.choice([-1.0, 1.0], size=trials)
            Z[np.arange(trials), idx] += sign * gross_sigmas * sig[idx]
        elif name == "stealthy":
            for t in range(trials):
                Z[t] += random_stealthy_attack(H, stealthy_magnitude, subseed(seed, "bdd-attack", t)).a
        elif name != "clean":
            raise ValueError(f"unknown stream {name!r}")
        flagged = int(tester.flags(Z).sum())
        rows.append({"stream": name, "trials": trials, "flagged": flagged, "flag_rate": flagged / trials,
                     "threshold": tester.threshold, "dof": m - n})
    return rows


def cmd_mtd(case: GridCase, ms: MeasurementSet, schedule: Sequence[float], trials: int = 500, seed: int = 0,
            attack_magnitude: float = 0.02, iterations: int = 120, p: float = DEFAULT_CONFIDENCE,
            objective: str = "maximize-spa") -> list[mtd.TradeoffRow]:
    return mtd.tradeoff_curve(case, ms, schedule, trials, seed, attack_magnitude, None, objective, iterations, p)


def cmd_lomos_bench(bits: int = 128, duration: float = 1.0, seed: int = 0, leaf_count: int = 4096) -> lomos.BenchReport:
    return lomos.bench_throughput(bits, duration, seed, leaf_count)


def cmd_ids_replay(events_lines: Sequence[str], baseline_lines: Sequence[str], window: float = ids.DEFAULT_WINDOW,
                   thresholds: dict | None = None) -> list[ids.AlarmRecord]:
    base = ids.flow_events_from_log(baseline_lines)
    events = ids.flow_events_from_log(events_lines)
    if not base:
        raise InputError("baseline log contains no frame records")
    first = min(e.timestamp for e in base)
    profile = ids.learn_baseline(base, window, start=window * np.floor(first / window))
    return ids.replay(events, profile, thresholds=thresholds)


# -- argument handling --------------------------------------------------------------

def _emit(text: str, out_dir: Path | None, filename: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / filename).write_text(text)


def _run_bdd(args) -> int:
    case, case_hash = _load_case(args.case)
    ms, ms_hash = _load_measurements(args.measurements, case, args.sigma)
    streams = [s.strip() for s in args.streams.split(",") if s.strip()]
    bad = [s for s in streams if s not in BDD_STREAMS]
    if bad:
        raise InputError(f"unknown stream(s): {', '.join(bad)}")
    rows = cmd_bdd(case, ms, args.trials, args.p, args.seed, args.noise_scale, args.gross_sigmas,
                   args.stealthy_magnitude, streams)
    buf = io.StringIO()
    buf.write(header("bdd", args.seed, {"case": case_hash, "measurements": ms_hash}, trials=args.trials, p=args.p))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stream", "trials", "flagged", "flag_rate", "threshold", "dof"])
    for r in rows:
        w.writerow([r["stream"], r["trials"], r["flagged"], repr(r["flag_rate"]), repr(r["threshold"]), r["dof"]])
    _emit(buf.getvalue(), args.out, "bdd.csv")
    return EXIT_OK


def _run_mtd(args) -> int:
    case, case_hash = _load_case(args.case)
    ms, ms_hash = _load_measurements(args.measurements, case, args.sigma)
    try:
        schedule = [float(v) for v in args.schedule.split(",")]
    except ValueError:
        raise InputError(f"invalid schedule {args.schedule!r}") from None
    rows = cmd_mtd(case, ms, schedule, args.trials, args.seed, args.attack_magnitude, args.iterations, args.p,
                   args.objective)
    text = header("mtd", args.seed, {"case": case_hash, "measurements": ms_hash}, trials=args.trials,
                  schedule=args.schedule, attack_magnitude=args.attack_magnitude) + mtd.write_tradeoff_csv(rows)
    _emit(text, args.out, "mtd_tradeoff.csv")
    return EXIT_OK


def _run_lomos(args) -> int:
    if args.bits < 0 or args.duration <= 0:
        raise InputError("bits must be >= 0 and duration > 0")
    rep = cmd_lomos_bench(args.bits, args.duration, args.seed, args.leaf_count)
    doc = {"tool": f"gridsec {__version__}", "seed": args.seed, **rep.as_dict()}
    if not rep.meets_target:
        sys.stderr.write(f"warning: measured {rep.ops_per_sec:.0f} ops/s is below the "
                         f"{rep.target_ops_per_sec:.0f} ops/s conformance target\n")
    _emit(json.dumps(doc, indent=2) + "\n", args.out, "lomos_bench.json")
    return EXIT_OK


def _run_sim(args) -> int:
    try:
        sc = resolve_scenario(args.scenario)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    overrides = {}
    for flag in ("ids", "bitw", "gateway", "reverse"):
        v = getattr(args, flag)
        if v is not None:
            overrides[flag] = v
    if overrides:
        sc = sc.with_defense(**overrides)
    if args.no_attacks:
        sc = sc.strip_attacks()
    seed = sc.seed if args.seed is None else args.seed
    rep = run_scenario(sc, seed)
    head = header("sim", seed, {"scenario": _sha256_text(sc.canonical_json())}, scenario=sc.name)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "events.jsonl").write_text(head + rep.log_jsonl())
        (args.out / "alarms.jsonl").write_text(head + rep.alarms_jsonl())
        (args.out / "alarm_summary.csv").write_text(head + ids.alarm_summary_csv(rep.alarms))
        (args.out / "trace.csv").write_text(head + rep.trace_csv())
        (args.out / "outcome.json").write_text(json.dumps(
            {"scenario": sc.name, "seed": seed, "log_sha256": rep.log_hash, **rep.outcome}, indent=2) + "\n")
    print(f"{sc.name}: {rep.verdict} (alarms={len(rep.alarms)}, log sha256={rep.log_hash})")
    return EXIT_OK


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise InputError(f"file {str(path)!r} not found")
    return path.read_text().splitlines()


def _run_ids(args) -> int:
    ev_lines = _read_lines(args.events)
    base_lines = _read_lines(args.baseline)
    try:
        alarms = cmd_ids_replay(ev_lines, base_lines, args.window)
    except ids.LogFormatError as exc:
        raise InputError(str(exc)) from None
    inputs = {"events": _sha256_text("\n".join(ev_lines)), "baseline": _sha256_text("\n".join(base_lines))}
    head = header("ids-replay", args.seed, inputs, window=args.window)
    _emit(head + ids.alarms_to_jsonl(alarms), args.out, "alarms.jsonl")
    if args.out is not None:
        _emit(head + ids.alarm_summary_csv(alarms), args.out, "alarm_summary.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; defaults are filled in by main()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="master seed (default 0, or the scenario's seed)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (default: stdout)")
    common.add_argument("--trials", type=int, default=argparse.SUPPRESS,
                        help="Monte Carlo trials (bdd 1000, mtd 500)")

    parser = argparse.ArgumentParser(prog="gridsec", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"gridsec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bdd", parents=[common], help="bad-data-detection flag rates")
    p.add_argument("--case", default="case5")
    p.add_argument("--measurements", default=None, help="measurement-set JSON (default: all flows and injections)")
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--p", type=float, default=DEFAULT_CONFIDENCE)
    p.add_argument("--streams", default=",".join(BDD_STREAMS))
    p.add_argument("--gross-sigmas", type=float, default=10.0)
    p.add_argument("--stealthy-magnitude", type=float, default=0.05)
    p.set_defaults(func=_run_bdd)

    p = sub.add_parser("mtd", parents=[common], help="MTD effectiveness/cost trade-off")
    p.add_argument("--case", default="case5")
    p.add_argument("--measurements", default=None)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--schedule", default="0,0.05,0.1,0.15,0.2")
    p.add_argument("--attack-magnitude", type=float, default=0.02)
    p.add_argument("--iterations", type=int, default=120)
    p.add_argument("--objective", choices=mtd.OBJECTIVES, default="maximize-spa")
    p.add_argument("--p", type=float, default=DEFAULT_CONFIDENCE)
    p.set_defaults(func=_run_mtd)

    p = sub.add_parser("lomos-bench", parents=[common], help="LoMoS prove+verify throughput")
    p.add_argument("--bits", type=int, default=128)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--leaf-count", type=int, default=4096)
    p.set_defaults(func=_run_lomos)

    p = sub.add_parser("sim", parents=[common], help="run a cyber-range scenario")
    p.add_argument("scenario", help="bundled scenario name or scenario JSON path")
    for flag in ("ids", "bitw", "gateway", "reverse"):
        p.add_argument(f"--{flag}", dest=flag, action="store_true", default=None)
        p.add_argument(f"--no-{flag}", dest=flag, action="store_false")
    p.add_argument("--no-attacks", action="store_true", help="strip the attack script")
    p.set_defaults(func=_run_sim)

    p = sub.add_parser("ids-replay", parents=[common], help="score an event log against a baseline log")
    p.add_argument("events", type=Path)
    p.add_argument("--baseline", type=Path, required=True)
    p.add_argument("--window", type=float, default=ids.DEFAULT_WINDOW)
    p.set_defaults(func=_run_ids)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    args.seed = getattr(args, "seed", None)
    if args.command != "sim" and args.seed is None:
        args.seed = 0
    args.out = getattr(args, "out", None)
    args.trials = getattr(args, "trials", DEFAULT_TRIALS.get(args.command, 1000))
    if args.trials < 1:
        print("error: --trials must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, CaseError, ScenarioError, ids.LogFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InfeasibleError, UnobservableError, IslandingError, RuntimeError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
