"""``nonholo list | simulate | verify``.

Exit codes: 0 success, 1 a verification check failed, 2 degenerate ``h``,
3 Newton failure on an implicit constraint, 4 singularity or non-finite state,
5 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import scenarios
from .errors import (ConfigError, Degenerate, DomainError, ExprError, NoConvergence, NonFinite,
                     SingularityReached, SingularJacobian)
from .integrate import Trajectory, monitor
from .model import TransState

EXIT_OK, EXIT_CHECK, EXIT_DEGENERATE, EXIT_NEWTON, EXIT_SINGULAR, EXIT_CONFIG = 0, 1, 2, 3, 4, 5
DEFAULT_SEED = 20240


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonholo", description="Constrained Lagrangian dynamics on foliated charts.")
    sub = p.add_subparsers(dest="command", required=True)

    ls = sub.add_parser("list", help="list built-in scenarios and their parameters")
    ls.add_argument("--json", action="store_true", help="machine-readable catalog")

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--scenario", help="built-in scenario name")
        src.add_argument("--config", help="scenario JSON file")
        sp.add_argument("--param", action="append", default=[], metavar="K=V",
                        help="parameter override (repeatable)")
        sp.add_argument("--init", action="append", default=[], metavar="FIELD=V1,V2,..",
                        help="initial-state override: x_leaf, x_trans, y_trans or t (repeatable)")
        sp.add_argument("--dt", type=float, help="step size")
        sp.add_argument("--t-end", type=float, dest="t_end", help="final time")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for randomized checks")
        sp.add_argument("--json", action="store_true", help="JSON summary on stdout")

    sim = sub.add_parser("simulate", help="integrate a scenario and write a CSV trajectory")
    common(sim)
    sim.add_argument("--out", help="CSV output path (default: stdout)")

    ver = sub.add_parser("verify", help="run reference checks and invariant suites")
    common(ver)
    ver.add_argument("--all", action="store_true", help="verify every built-in scenario")
    ver.add_argument("--out", help="write the report (JSON) to this path")
    ver.add_argument("--corrupt-sign", action="store_true", dest="corrupt_sign", help=argparse.SUPPRESS)

    exp = sub.add_parser("export", help="write a built-in scenario as a JSON file")
    exp.add_argument("--scenario", required=True)
    exp.add_argument("--param", action="append", default=[], metavar="K=V")
    exp.add_argument("--out", help="output path (default: stdout)")
    return p


def _kv(items, what):
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{what} {item!r} must look like key=value")
        out[key.strip()] = val.strip()
    return out


def _params(items):
    out = {}
    for k, v in _kv(items, "--param").items():
        try:
            out[k] = float(v)
        except ValueError:
            raise ConfigError(f"--param {k}: {v!r} is not a number") from None
    return out


def _load(args) -> scenarios.Scenario:
    params = _params(args.param)
    if args.config:
        sc = scenarios.load(args.config)
        if params:
            spec = sc.export()
            unknown = set(params) - set(spec.get("parameters", {}))
            if unknown:
                raise ConfigError(f"unknown parameter(s) for {args.config}: {', '.join(sorted(unknown))}")
            spec["parameters"].update(params)
            sc = scenarios.scenario_from_dict(spec)
    elif args.scenario:
        sc = scenarios.build(args.scenario, params)
    else:
        raise ConfigError("give --scenario NAME or --config FILE")
    init = _kv(args.init, "--init")
    if init:
        spec = sc.export()
        for k, v in init.items():
            if k not in ("x_leaf", "x_trans", "y_trans", "t"):
                raise ConfigError(f"--init: unknown field {k!r}")
            try:
                vals = [float(s) for s in v.split(",")]
            except ValueError:
                raise ConfigError(f"--init {k}: {v!r} is not a comma-separated list of numbers") from None
            spec["initial"][k] = vals[0] if k == "t" else vals
        ref = sc
        sc = scenarios.scenario_from_dict(spec)
        if not sc.checks:
            sc.checks, sc.oracle, sc.sampler = ref.checks, ref.oracle, ref.sampler
    if args.t_end is not None:
        if not args.t_end > sc.t0:
            raise ConfigError(f"--t-end ({args.t_end}) must exceed t0 ({sc.t0})")
        sc.t_end = args.t_end
    if args.dt is not None:
        if not args.dt > 0:
            raise ConfigError(f"--dt must be positive, got {args.dt}")
        sc.dt = args.dt
    return sc


def _header(m, n):
    return (["t"] + [f"x{i + 1}" for i in range(m)] + [f"xb{i + 1}" for i in range(n)]
            + [f"y{i + 1}" for i in range(m)] + [f"yb{i + 1}" for i in range(n)] + ["residual_max"])


def write_csv(traj: Trajectory, stream) -> None:
    m, n = traj.x_leaf.shape[1], traj.x_trans.shape[1]
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(_header(m, n))
    cols = np.column_stack([traj.t, traj.x_leaf, traj.x_trans, traj.y_leaf, traj.y_trans,
                            traj.residual_max()])
    for row in cols:
        w.writerow(["%.17g" % v for v in row])


def _state_dict(s: TransState) -> dict:
    d = {"x_leaf": s.x_leaf.tolist(), "x_trans": s.x_trans.tolist(), "y_trans": s.y_trans.tolist()}
    if s.t is not None:
        d["t"] = float(s.t)
    return d


def _emit_csv(traj, out):
    if out:
        with open(out, "w", newline="", encoding="ascii") as fh:
            write_csv(traj, fh)
    else:
        buf = io.StringIO()
        write_csv(traj, buf)
        sys.stdout.write(buf.getvalue())


def cmd_simulate(args) -> int:
    sc = _load(args)
    try:
        traj = sc.simulate()
    except (SingularityReached, NonFinite, Degenerate) as err:
        partial = getattr(err, "partial", None)
        if partial is not None and len(partial) and args.out:
            _emit_csv(partial, args.out)
        raise
    mon = monitor(traj, sc.L, sc.C) if len(traj) >= 3 else None
    _emit_csv(traj, args.out)
    summary = {"scenario": sc.name, "steps": len(traj) - 1, "dt": sc.dt, "t_end": float(traj.t[-1]),
               "final": _state_dict(traj.final), "final_y_leaf": traj.y_leaf[-1].tolist(),
               "max_residual": float(np.nanmax(traj.residual_max())),
               "monitor_max_residual": None if mon is None else mon.max_residual}
    report = sys.stdout if args.out else sys.stderr
    if args.json:
        print(json.dumps(summary, indent=2), file=report)
    else:
        print(f"{sc.name}: {summary['steps']} steps of {sc.dt:g} to t = {summary['t_end']:.6g}", file=report)
        print(f"  final state: {summary['final']}", file=report)
        print(f"  final leaf velocities: {summary['final_y_leaf']}", file=report)
        print(f"  max on-shell residual: {summary['max_residual']:.3e}", file=report)
        if mon is not None:
            print(f"  monitor max residual: {mon.max_residual:.3e}", file=report)
    return EXIT_OK


def _verify_one(sc, seed, corrupt):
    sign = -1.0 if corrupt else 1.0
    rep = scenarios.run_reference_checks(sc)
    checks = list(rep.checks)
    checks += scenarios.invariant_checks(sc, seed=seed, chetaev_sign=sign)
    return {"scenario": sc.name, "passed": all(c.passed is not False for c in checks),
            "checks": [{"name": c.name, "passed": c.passed, "measured": c.measured, "limit": c.limit,
                        "note": c.note} for c in checks],
            "annotations": rep.annotations}, checks


def cmd_verify(args) -> int:
    if args.all:
        if args.scenario or args.config:
            raise ConfigError("--all cannot be combined with --scenario or --config")
        if args.param or args.init:
            raise ConfigError("--all runs default parameters; drop --param/--init")
        targets = []
        for name in scenarios.BUILTINS:
            sc = scenarios.build(name)
            if args.dt is not None:
                sc.dt = args.dt
            if args.t_end is not None:
                sc.t_end = args.t_end
            targets.append(sc)
    else:
        targets = [_load(args)]
    results = []
    ok = True
    for sc in targets:
        res, checks = _verify_one(sc, args.seed, args.corrupt_sign)
        results.append(res)
        ok &= res["passed"]
        if not args.json:
            print(f"== {sc.name} (dt={sc.dt:g}, t in [{sc.t0:g}, {sc.t_end:g}])")
            for c in checks:
                print("  " + c.line())
            for k, v in res["annotations"].items():
                print(f"  note  {k}: {v}")
    if args.json:
        print(json.dumps({"passed": ok, "results": results}, indent=2))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"passed": ok, "results": results}, fh, indent=2)
    if not args.json:
        print("ALL PASS" if ok else "SOME CHECKS FAILED")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_list(args) -> int:
    catalog = [{"name": n, "description": scenarios.DESCRIPTIONS[n], "parameters": scenarios.DEFAULTS[n]}
               for n in scenarios.BUILTINS]
    if args.json:
        print(json.dumps(catalog, indent=2))
    else:
        for entry in catalog:
            print(f"{entry['name']}: {entry['description']}")
            print("    " + ", ".join(f"{k}={v:g}" for k, v in entry["parameters"].items()))
    return EXIT_OK


def cmd_export(args) -> int:
    sc = scenarios.build(args.scenario, _params(args.param))
    text = json.dumps(sc.export(), indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    handler = {"list": cmd_list, "simulate": cmd_simulate, "verify": cmd_verify, "export": cmd_export}
    try:
        return handler[args.command](args)
    except Degenerate as err:
        print(f"error: regularity failure: {err}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (SingularJacobian, NoConvergence) as err:
        print(f"error: Newton failure: {err}", file=sys.stderr)
        return EXIT_NEWTON
    except (SingularityReached, NonFinite) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SINGULAR
    except (ConfigError, ExprError) as err:
        print(f"error: configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SINGULAR


if __name__ == "__main__":
    sys.exit(main())
