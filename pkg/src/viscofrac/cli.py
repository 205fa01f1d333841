"""Command line: ``viscofrac {validate,run,audit,check-alternative}``.

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
import time
from pathlib import Path

from . import io
from .driver import (Alternative, Evolution, MeshInversionError, SolverError, aligned_end,
                     check_eta_maximality, continue_evolution, initial_evolution,
                     maximality_conditions)
from .geometry import LengthProfile, turn_path
from .scenario import ScenarioError, dump_scenario, load_scenario, scenario_dict

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3


def _fail(kind: str, message: str, code: int, out_dir: Path | None = None) -> int:
    print(f"error ({kind}): {message}", file=sys.stderr)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        io.write_error(out_dir / "error.json", kind, message, code)
    return code


def cmd_validate(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INVALID)
    cfg = sc.config
    print(f"scenario ok: {len(cfg.intervals)} windows on [{cfg.times[0]:g}, {cfg.times[-1]:g}], "
          f"mu = {cfg.mu:g}, eta = {cfg.eta:g}")
    for name, rep in sc.reports.items():
        if isinstance(rep, dict):
            for sub, r in rep.items():
                print(f"  {name}.{sub}: pass (worst violation {r.worst_violation:.3g})")
        else:
            print(f"  {name}: {rep.summary()}")
    return EXIT_OK


def cmd_run(args) -> int:
    out = Path(args.output)
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INVALID, out)
    out.mkdir(parents=True, exist_ok=True)
    stride = sc.snapshot_stride if args.snapshot_stride is None else args.snapshot_stride
    problem = sc.problem()
    timings = {}
    t_start = time.perf_counter()
    checkpoint = out / "checkpoint.pkl"
    try:
        if args.resume:
            evolution = Evolution.load(args.resume)
            if evolution.config != sc.config:
                return _fail("ScenarioError", "checkpoint was produced by a different scenario",
                             EXIT_INVALID, out)
        else:
            evolution = initial_evolution(problem)
        evolution = continue_evolution(evolution, problem, args.stop_after, checkpoint)
    except (SolverError, MeshInversionError, RuntimeError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_SOLVER, out)
    timings["evolution"] = time.perf_counter() - t_start

    t_io = time.perf_counter()
    written = []
    if evolution.intervals:
        for name, fn in (("profile.csv", lambda p: io.write_profile_csv(evolution, p)),
                         ("ledger.csv", lambda p: io.write_ledger_csv(evolution, p)),
                         ("audit.csv", lambda p: io.write_audit_csv(evolution, p)),
                         ("trajectory.csv", lambda p: io.write_trajectory_csv(evolution, problem, p))):
            fn(out / name)
            written.append(name)
    io.write_crack(evolution.path, out / "crack.txt")
    written.append("crack.txt")
    snaps = io.write_snapshots(evolution, out / "snapshots", stride) if evolution.intervals else []
    written += [str(p.relative_to(out)) for p in snaps]
    timings["output"] = time.perf_counter() - t_io
    status = "complete" if evolution.complete else ("partial" if evolution.error is None else "failed")
    io.write_manifest(out / "manifest.json", dump_scenario(sc), sc.digest(), scenario_dict(sc),
                      timings, written, status)
    if evolution.error is not None:
        return _fail("SolverError", evolution.error, EXIT_SOLVER, out)
    final = evolution.profile(evolution.profile.T1) if evolution.profile else sc.initial_path().b
    print(f"done: {len(evolution.intervals)} windows, final crack length {final:.6g}, "
          f"outputs in {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        rows = io.read_audit_csv(args.audit)
    except (OSError, KeyError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INVALID)
    best = io.rescore_audit(rows, args.tol)
    # with the logged tolerance a mismatch only arises after a fallback window
    mismatch = 0
    for interval in sorted({r["interval"] for r in rows}):
        logged = [r for r in rows if r["interval"] == interval and r["chosen"] == 1]
        win = best.get(interval)
        desc = "none balanced" if win is None else (
            f"angle {win['angle']:g}, speed {win['speed']:g}, {win['shape']}, score {win['score']:.6g}")
        agree = bool(logged) and win is not None and logged[0]["index"] == win["index"]
        if not agree:
            mismatch += 1
        print(f"window {interval}: {desc}{'' if agree else '  (differs from the logged choice)'}")
    return EXIT_INVALID if mismatch and args.strict else EXIT_OK


def _read_alternative(path: str, evolution: Evolution, rho: float) -> Alternative:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise ValueError(f"cannot read alternative file {path}")
    sec = parser["alternative"]
    tau0 = float(sec["tau0"])
    tau1 = float(sec["tau1"])
    end = float(sec.get("end", str(tau1)))
    angle = float(sec.get("angle", "0"))
    shape = sec.get("shape", "linear").strip().lower()
    rate = float(sec.get("rate", "0"))
    prof = evolution.profile
    s0 = float(prof(tau0))
    if shape == "linear":
        tail = LengthProfile.linear(s0, rate, tau0, end, prof.mu, prof.M)
    elif shape == "smoothstep":
        tail = LengthProfile.ramp(s0, rate, tau0, end, prof.mu, prof.M)
    elif shape == "constant":
        tail = LengthProfile.constant(s0, tau0, end, prof.mu, prof.M)
    else:
        raise ValueError(f"unknown alternative shape {shape!r}")
    s1 = max(float(tail(end)), s0)
    path_ = turn_path(evolution.path, s0, math.radians(angle), aligned_end(evolution.path, s1), rho)
    return Alternative.branch(evolution, tau0, path_, tail, tau1)


def cmd_check_alternative(args) -> int:
    try:
        sc = load_scenario(args.scenario)
        evolution = Evolution.load(args.evolution)
        problem = sc.problem()
        alt = _read_alternative(args.alternative, evolution, sc.config.motion_radius)
        maximal = check_eta_maximality(evolution, alt, sc.config.eta, problem)
    except (ScenarioError, ValueError, KeyError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INVALID)
    except (SolverError, MeshInversionError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_SOLVER)
    v = maximality_conditions(evolution, alt, sc.config.eta)
    print(f"M1 {v.m1}  M2 {v.m2}  M3 {v.m3}")
    print("maximal: no violation witnessed" if maximal else "violation: the alternative refutes maximality")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viscofrac", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="parse and check a scenario without solving")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("run", help="run an evolution and write its outputs")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--snapshot-stride", type=int, default=None,
                   help="VTK snapshot every k steps (overrides the scenario; 0 disables)")
    s.add_argument("--stop-after", type=int, default=None, help="stop after this many windows")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("audit", help="re-score an audit log")
    s.add_argument("audit")
    s.add_argument("--tol", type=float, default=0.02, help="balance tolerance (default 0.02)")
    s.add_argument("--strict", action="store_true",
                   help="exit 2 when a re-scored winner differs from the logged choice")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("check-alternative", help="test an alternative against eta-maximality")
    s.add_argument("scenario")
    s.add_argument("--evolution", required=True, help="checkpoint.pkl written by 'run'")
    s.add_argument("--alternative", required=True, help="INI file with an [alternative] section")
    s.set_defaults(func=cmd_check_alternative)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
