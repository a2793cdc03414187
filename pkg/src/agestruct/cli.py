"""Command-line entry point: ``agestruct <command> --config SCENARIO``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import BracketError, NumericFailure, validate_hypotheses
from .equilibrium import EquilibriumSolution, NoUpperBound, solve_equilibrium, uniqueness_certificate
from .linear import (
    BoundaryClassError,
    EnvelopeUnavailable,
    NoRootError,
    asymptotic_profile,
    comparison_envelopes,
    lotka_root,
    r0_linear,
    sandwich_check,
)
from .lyapunov import lyapunov_trace, scheme_equilibrium
from .scenario import Scenario, ScenarioError, get_path, load_scenario
from .simulate import SchemeError, TrajectoryRecord, simulate
from .stability import classify_equilibrium, characteristic_function, decay_cutoff, linearize_at

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

COMMANDS = ("validate", "simulate", "equilibrium", "stability", "linear", "lyapunov", "sweep")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_metadata(out: Path, scenario: Scenario, command: str, extra: dict | None = None) -> None:
    g = scenario.grid
    meta = {
        "tool": "agestruct",
        "version": __version__,
        "command": command,
        "scenario": scenario.name,
        "scenario_sha256": scenario.digest(),
        "grid": {"a1": g.a1, "da": g.da, "a_min": g.a_min, "a_max": g.a_max, "n": g.n},
        "scenario_document": scenario.to_dict(),
    }
    meta.update(extra or {})
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x)}")


def write_trajectory(out: Path, rec: TrajectoryRecord, grid) -> None:
    write_csv(out / "trajectory.csv", rec.COLUMNS, rec.rows())
    for t, p in sorted(rec.snapshots.items()):
        write_csv(out / f"p_t{t:g}.csv", ("age", "density"), zip(grid.ages, p))


def _print_table(pairs) -> None:
    width = max(len(k) for k, _ in pairs)
    for k, v in pairs:
        print(f"{k:<{width}}  {_fmt(v)}")


# --------------------------------------------------------------- commands


def _equilibrium(sc: Scenario) -> EquilibriumSolution:
    return solve_equilibrium(sc.rates, sc.grid)


def cmd_validate(sc: Scenario, args) -> int:
    rep = validate_hypotheses(sc.rates, sc.grid, args.q0_bracket)
    rows = [("scenario", sc.name), ("rate_class", rep.rate_class)]
    rows += [(k, v) for k, v in rep.flags().items()]
    rows += [("omega_bound", rep.omega_bound), ("crowding_q0", rep.crowding_q0)]
    _print_table(rows)
    for key, msgs in rep.witnesses.items():
        for m in msgs:
            print(f"  {key}: {m}")
    if args.out:
        write_csv(args.out / "validate.csv", ("check", "value"), rows)
        write_metadata(args.out, sc, "validate", {"witnesses": rep.witnesses})
    return EXIT_OK


def cmd_simulate(sc: Scenario, args) -> int:
    g = sc.grid
    rec = simulate(sc.rates, g, sc.initial_density(g), sc.t_end, sc.snapshot_every)
    _print_table([("steps", len(rec) - 1), ("T_final", rec.T[-1]), ("B_final", rec.B[-1]),
                  ("min_density", rec.min_density), ("growth_ratio", rec.growth_ratio)])
    if args.out:
        write_trajectory(args.out, rec, g)
        write_metadata(args.out, sc, "simulate", {"omega": rec.omega})
    return EXIT_OK


def cmd_equilibrium(sc: Scenario, args) -> int:
    eq = _equilibrium(sc)
    cert = uniqueness_certificate(sc.rates, sc.grid)
    rep = eq.report()
    _print_table(list(rep.items()) + [("uniqueness", cert.verdict), ("rate_class", cert.rate_class)])
    if args.out:
        write_csv(args.out / "equilibrium.csv", list(rep), [list(rep.values())])
        write_csv(args.out / "phi_hat.csv", ("age", "density"), zip(sc.grid.ages, eq.phi_hat))
        write_metadata(args.out, sc, "equilibrium", {"uniqueness": cert.summary()})
    return EXIT_OK


def cmd_stability(sc: Scenario, args) -> int:
    g, r = sc.grid, sc.rates
    eq = _equilibrium(sc)
    trivial = EquilibriumSolution("trivial", 0.0, 0.0, np.zeros(g.n), eq.igc, 0.0, 0.0, method="trivial")
    cases = [trivial] if eq.kind == "trivial" else [trivial, eq]
    header = ("equilibrium", "Q0_hat", "dR", "dR_sign", "positivity", "cross_sign", "classification", "real_roots")
    rows = []
    curves = []
    for e in cases:
        op = linearize_at(r, g, e)
        v = classify_equilibrium(op, e)
        rows.append((e.kind, e.q0_hat, v.dR, int(np.sign(v.dR)), v.hypothesis_flags["positivity"],
                     v.hypothesis_flags["cross_sign"], v.classification,
                     " ".join(f"{x:.8g}" for x in v.real_roots)))
        hi = decay_cutoff(op)
        for lam in np.linspace(0.0, hi, 101):
            curves.append((e.kind, lam, characteristic_function(op, lam)))
    print("  ".join(header))
    for row in rows:
        print("  ".join(_fmt(x) for x in row))
    if args.out:
        write_csv(args.out / "stability.csv", header, rows)
        write_csv(args.out / "characteristic.csv", ("equilibrium", "lambda", "K"), curves)
        write_metadata(args.out, sc, "stability")
    return EXIT_OK


def cmd_linear(sc: Scenario, args) -> int:
    g, r = sc.grid, sc.rates
    cap = sc.population_ceiling
    if cap is None:
        raise UsageError("scenario needs population_ceiling for the comparison envelopes")
    lower, upper = comparison_envelopes(r, g, cap)
    p0 = sc.initial_density(g)
    rows = []
    for m in (lower, upper):
        r0 = r0_linear(m)
        lam = lotka_root(m)
        try:
            prof = asymptotic_profile(m, p0).profile
            mass = float(np.sum(prof) * g.da)
        except BoundaryClassError:
            prof, mass = None, math.nan
        rows.append((m.label, cap, r0, lam, mass))
        if args.out and prof is not None:
            write_csv(args.out / f"profile_{m.label}.csv", ("age", "density"), zip(g.ages, prof))
    rep = sandwich_check(r, g, p0, sc.t_end, cap)
    header = ("envelope", "cap", "r0_tilde", "lambda0", "profile_mass")
    print("  ".join(header))
    for row in rows:
        print("  ".join(_fmt(x) for x in row))
    summary = [("lower_violation", rep.lower_violation), ("upper_violation", rep.upper_violation),
               ("relative_violation", rep.relative_violation), ("norm_ordered", rep.norm_ordered),
               ("cap_respected", rep.cap_respected), ("max_Q0", rep.max_q0), ("max_Q1", rep.max_q1)]
    _print_table(summary)
    if args.out:
        write_csv(args.out / "linear.csv", header, rows)
        write_csv(args.out / "sandwich.csv", ("t", "lower", "nonlinear", "upper"),
                  np.column_stack([rep.times, rep.norms]))
        write_metadata(args.out, sc, "linear", {"sandwich": dict(summary)})
    return EXIT_OK


def cmd_lyapunov(sc: Scenario, args) -> int:
    g, r = sc.grid, sc.rates
    eq = _equilibrium(sc)
    every = sc.snapshot_every or max(g.da, round(sc.t_end / 100 / g.da) * g.da)
    rec = simulate(r, g, sc.initial_density(g), sc.t_end, every)
    if eq.kind == "trivial":
        traces = [lyapunov_trace(r, g, rec, "trivial")]
        names = ["trivial"]
    else:
        ref = scheme_equilibrium(r, g, eq.q0_hat, eq.q1_hat)
        traces = [lyapunov_trace(r, g, rec, "positive", ref, v) for v in ("classical", "absolute")]
        names = ["classical", "absolute"]
    for n, tr in zip(names, traces):
        _print_table([("functional", n), ("max_jump", tr.max_jump), ("tolerance", tr.tolerance),
                      ("monotone", tr.monotone)])
    if args.out:
        write_csv(args.out / "lyapunov.csv", ("t", *names),
                  np.column_stack([traces[0].times] + [t.values for t in traces]))
        write_metadata(args.out, sc, "lyapunov", {n: {"max_jump": t.max_jump, "tolerance": t.tolerance,
                                                      "monotone": t.monotone} for n, t in zip(names, traces)})
    return EXIT_OK


def _sweep_one(doc: dict, param: str, value: float) -> tuple:
    from .scenario import parse_scenario, set_path

    set_path(doc, param, value)
    try:
        sc = parse_scenario(doc)
        eq = solve_equilibrium(sc.rates, sc.grid)
        rep = eq.report()
        return (value, rep["igc"], rep["kind"], rep["Q0_hat"], rep["Q1_hat"], rep["mean_age"],
                rep["avg_lifespan"], "")
    except (ScenarioError, NumericFailure, NoUpperBound, BracketError, ValueError) as exc:
        return (value, math.nan, "error", math.nan, math.nan, math.nan, math.nan, str(exc).replace(",", ";"))


def cmd_sweep(sc: Scenario, args) -> int:
    if not args.param or not args.values:
        raise UsageError("sweep needs --param and --values")
    get_path(sc.doc, args.param)
    values = [float(v) for v in args.values.split(",")] if isinstance(args.values, str) else args.values
    docs = [sc.to_dict() for _ in values]
    with ProcessPoolExecutor(max_workers=args.workers) as ex:
        rows = list(ex.map(_sweep_one, docs, [args.param] * len(values), values))
    header = ("value", "igc", "kind", "Q0_hat", "Q1_hat", "mean_age", "avg_lifespan", "error")
    print("  ".join(header))
    for row in rows:
        print("  ".join(_fmt(x) for x in row))
    if args.out:
        write_csv(args.out / "sweep.csv", header, rows)
        write_metadata(args.out, sc, "sweep", {"param": args.param, "values": values})
    return EXIT_OK


HANDLERS = {"validate": cmd_validate, "simulate": cmd_simulate, "equilibrium": cmd_equilibrium,
            "stability": cmd_stability, "linear": cmd_linear, "lyapunov": cmd_lyapunov, "sweep": cmd_sweep}


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agestruct", description=__doc__)
    ap.add_argument("--version", action="version", version=f"agestruct {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="scenario file or preset name")
    ap.add_argument("--out", type=Path, help="directory for CSV and metadata output")
    ap.add_argument("--da", type=float, help="override the cell width")
    ap.add_argument("--t-end", type=float, dest="t_end", help="override the run length")
    ap.add_argument("--snapshot-every", type=float, dest="snapshot_every", help="override the snapshot interval")
    ap.add_argument("--format", choices=("csv",), default="csv")
    ap.add_argument("--q0-bracket", type=float, default=1e6, dest="q0_bracket",
                    help="upper end of the size lattice for hypothesis checks")
    ap.add_argument("--param", help="sweep: dotted scenario path, e.g. grid.a_min")
    ap.add_argument("--values", help="sweep: comma separated values")
    ap.add_argument("--workers", type=int, default=None, help="sweep: worker processes")
    return ap


def _apply_overrides(sc: Scenario, args) -> Scenario:
    changes = {}
    if args.da is not None:
        changes["grid.da"] = args.da
    if args.t_end is not None:
        changes["run.t_end"] = args.t_end
    if args.snapshot_every is not None:
        changes["run.snapshot_every"] = args.snapshot_every
    return sc.replace(**changes) if changes else sc


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        sc = _apply_overrides(load_scenario(args.config), args)
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](sc, args)
    except (FileNotFoundError, ScenarioError, UsageError, SchemeError, EnvelopeUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NoUpperBound, BracketError, NoRootError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
