"""Command-line front end.

Subcommands
-----------
simulate   run one scenario file or a directory of them
tune-epc   size and allocate EPC droops for a tuning problem
ss-freq    evaluate the steady-state frequency algebra
validate   check scenario files and print diagnostics

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 tuning
infeasible.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_INFEASIBLE = 4

# published reference values used by ``ss-freq --paper-compare``
PUBLISHED_FINAL_DEVIATION_HZ = 0.4          # 1040 MW loss, no EPC
PUBLISHED_REPLACEMENT_BETA_H = 3715.0       # 1450 MW loss, beta_g = 2418 MW/Hz


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _split_channels(text: Optional[str]) -> Optional[List[str]]:
    if not text:
        return None
    return [c.strip() for c in text.split(",") if c.strip()]


# -- simulate -------------------------------------------------------------------

def _simulate_one(path: str, out_dir: str, dt: Optional[float], t_end: Optional[float],
                  integrator: Optional[str], channels: Optional[List[str]], plots: bool,
                  dump_admittance: bool) -> Tuple[int, str]:
    """Run one scenario; returns (exit code, human summary)."""
    from .engine import SimulationError, run_simulation
    from .hub import HubInfeasibleError
    from .network import (NetworkConvergenceError, NetworkError, PowerFlowError,
                          build_admittance, dump_admittance as write_admittance)
    from .results import write_result
    from .scenario_io import (ScenarioParseError, diagnostics_text, dump_scenario,
                              load_scenario, validate_scenario)

    try:
        s = load_scenario(path, validate=False)
    except (ScenarioParseError, OSError) as exc:
        return EXIT_INVALID, f"{path}: {exc}"
    changes = {}
    if dt is not None:
        changes["dt_s"] = dt
    if t_end is not None:
        changes["t_end_s"] = t_end
    if integrator is not None:
        changes["integrator"] = integrator
    if changes:
        s = s.with_solver(**changes)
    diags = validate_scenario(s)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        return EXIT_INVALID, f"{path}: invalid scenario\n{diagnostics_text(errors)}"
    for d in diags:
        _err(f"{path}: {d}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_scenario(s, out / "effective_scenario.json")
    try:
        if dump_admittance:
            write_admittance(build_admittance(s), out / "admittance.mtx")
        result = run_simulation(s)
    except (PowerFlowError, NetworkConvergenceError, NetworkError, HubInfeasibleError,
            SimulationError) as exc:
        return EXIT_SOLVER, f"{path}: solver failure: {exc}"
    try:
        write_result(result, out, channels=channels, make_plots=plots)
    except KeyError as exc:
        return EXIT_INVALID, f"{path}: {exc}"
    return EXIT_OK, _metrics_summary(s.name or Path(path).stem, result.metrics)


def _metrics_summary(name: str, m) -> str:
    lines = [f"scenario {name}",
             f"  nadir            {m.nadir_hz:.4f} Hz at t = {m.t_nadir_s:.2f} s",
             f"  max IFD          {m.max_ifd_hz:.4f} Hz",
             f"  RoCoF            {m.rocof_hz_s:.4f} Hz/s",
             f"  steady-state df  {m.df_ss_hz:+.4f} Hz",
             f"  FCR-D at nadir   {m.fcrd_power_at_nadir_mw:.1f} MW"]
    active = {k: v for k, v in m.peak_epc_mw.items() if abs(v) > 1e-9}
    if active:
        lines.append(f"  peak EPC total   {sum(active.values()):.1f} MW over {len(active)} link(s)")
    flags = [n for n, on in (("below f_min", m.below_min_allowed),
                             ("load shedding threshold", m.load_shedding_breach),
                             ("steady-state limit", m.ss_limit_breach)) if on]
    lines.append("  breaches         " + (", ".join(flags) if flags else "none"))
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    src = Path(args.scenario)
    channels = _split_channels(args.channels)
    common = (args.dt, args.t_end, args.integrator, channels, not args.no_plots,
              args.dump_admittance)
    if src.is_dir():
        files = sorted(p for p in src.glob("*.json"))
        if not files:
            _err(f"{src}: no scenario files")
            return EXIT_INVALID
        jobs = [(str(p), str(Path(args.out) / p.stem)) + common for p in files]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                outcomes = list(pool.map(_simulate_star, jobs))
        else:
            outcomes = [_simulate_star(j) for j in jobs]
    else:
        outcomes = [_simulate_one(str(src), args.out, *common)]
    code = EXIT_OK
    for rc, text in outcomes:
        if rc == EXIT_OK:
            print(text)
        else:
            _err(text)
        code = max(code, rc)
    return code


def _simulate_star(job) -> Tuple[int, str]:
    return _simulate_one(*job)


# -- tune-epc -------------------------------------------------------------------

def cmd_tune_epc(args) -> int:
    from .tuning import TuningInfeasibleError, load_tuning_problem, tune_epc

    try:
        problem = load_tuning_problem(args.problem)
        if args.mode is not None:
            problem = replace(problem, mode=args.mode)
        problem.validate()
    except (OSError, ValueError, KeyError, TypeError) as exc:
        _err(f"{args.problem}: invalid tuning problem: {exc}")
        return EXIT_INVALID
    refine = None
    if args.refine_scenario:
        from .scenario_io import ScenarioParseError, ScenarioValidationError, load_scenario
        from .tuning import scenario_refinement_hook
        try:
            refine = scenario_refinement_hook(load_scenario(args.refine_scenario), problem.mode)
        except (OSError, ScenarioParseError, ScenarioValidationError) as exc:
            _err(f"{args.refine_scenario}: {exc}")
            return EXIT_INVALID
    try:
        result = tune_epc(problem, refine=refine)
    except TuningInfeasibleError as exc:
        _err(f"tuning infeasible ({exc.stage}): {exc}")
        if exc.shortfall:
            _err(f"  shortfall {exc.shortfall:.1f} MW/Hz")
        return EXIT_INFEASIBLE
    text = json.dumps(result.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(f"mode {result.mode}: beta_h target {result.beta_h_target:.1f} MW/Hz, "
          f"allocated {result.beta_h:.1f} MW/Hz over {len(result.droops)} link(s)")
    finite = [r for r in result.droops.values() if math.isfinite(r)]
    if finite:
        print(f"  droops {min(finite):.4f} .. {max(finite):.4f} pu; "
              f"clamped: {', '.join(result.clamped) or 'none'}")
    print(f"  predicted nadir {result.predicted_nadir_hz:.4f} Hz, "
          f"steady-state df {result.predicted_df_ss_hz:+.4f} Hz")
    return EXIT_OK


# -- ss-freq ----------------------------------------------------------------------

def cmd_ss_freq(args) -> int:
    from .model import FrequencyTargets
    from .tuning import (TuningInfeasibleError, replacement_ratio, required_beta_h,
                         steady_state_deviation)

    given = {k: v for k, v in (("f_n", args.f_n), ("f_fcrd", args.f_fcrd),
                               ("f_tfl", args.f_tfl)) if v is not None}
    targets = replace(FrequencyTargets(), **given)
    if not (targets.f_tfl <= targets.f_fcrd <= targets.f_n):
        _err("thresholds must satisfy f_tfl <= f_fcrd <= f_n")
        return EXIT_INVALID
    if args.beta_g < 0 or (args.beta_h is not None and args.beta_h < 0):
        _err("stiffness values must be non-negative")
        return EXIT_INVALID

    if args.df_target is not None:
        if args.beta_h is not None:
            _err("--beta-h and --df-target are mutually exclusive")
            return EXIT_INVALID
        try:
            beta_h = required_beta_h(args.dp, args.beta_g, args.df_target, targets)
        except TuningInfeasibleError as exc:
            _err(str(exc))
            return EXIT_INVALID
        print(f"required beta_h = {beta_h:.2f} MW/Hz for df = -{abs(args.df_target):.4f} Hz")
        print(f"replacement ratio = {replacement_ratio(args.df_target, targets):.4f} "
              f"MW/Hz of link stiffness per MW/Hz of generator stiffness")
        if args.paper_compare:
            print(f"published reference: beta_h = {PUBLISHED_REPLACEMENT_BETA_H:.0f} MW/Hz "
                  f"(computed {beta_h:.0f} MW/Hz, difference "
                  f"{beta_h - PUBLISHED_REPLACEMENT_BETA_H:+.0f} MW/Hz)")
            check = steady_state_deviation(args.dp, args.beta_g, PUBLISHED_REPLACEMENT_BETA_H,
                                           targets)
            print(f"  the published value gives df = {check.df_hz:+.4f} Hz")
        return EXIT_OK

    beta_h = args.beta_h if args.beta_h is not None else 0.0
    if args.beta_g + beta_h <= 0:
        _err("beta_g + beta_h must be positive")
        return EXIT_INVALID
    ss = steady_state_deviation(args.dp, args.beta_g, beta_h, targets)
    print(f"df = {ss.df_hz + 0.0:+.4f} Hz (f_ss = {ss.f_ss_hz:.4f} Hz)")
    print(f"valid: {'yes' if ss.valid else 'no'}" + (f" ({ss.note})" if ss.note else ""))
    if args.paper_compare:
        print(f"published reference: final deviation about "
              f"{PUBLISHED_FINAL_DEVIATION_HZ:.1f} Hz (computed {abs(ss.df_hz):.4f} Hz)")
    return EXIT_OK


# -- validate ----------------------------------------------------------------------

def cmd_validate(args) -> int:
    from .scenario_io import ScenarioParseError, load_scenario, validate_scenario

    code = EXIT_OK
    for path in args.scenario:
        try:
            s = load_scenario(path, validate=False)
        except (ScenarioParseError, OSError) as exc:
            _err(f"{path}: {exc}")
            code = EXIT_INVALID
            continue
        diags = validate_scenario(s)
        for d in diags:
            _err(f"{path}: {d}")
        n_err = sum(d.severity == "error" for d in diags)
        print(f"{path}: {'ok' if n_err == 0 else 'invalid'} "
              f"({n_err} error(s), {len(diags) - n_err} warning(s))")
        if n_err:
            code = EXIT_INVALID
    return code


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acdcfreq", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario or a directory of scenarios")
    sim.add_argument("--scenario", required=True, help="scenario JSON file or directory")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--dt", type=float, help="step size override (s)")
    sim.add_argument("--t-end", type=float, help="end time override (s)")
    sim.add_argument("--integrator", choices=("rk4", "trapezoidal"), help="integrator override")
    sim.add_argument("--channels", help="comma-separated channel names or globs for the CSV")
    sim.add_argument("--no-plots", action="store_true", help="skip SVG plots")
    sim.add_argument("--jobs", type=int, default=1, help="parallel workers for directories")
    sim.add_argument("--dump-admittance", action="store_true",
                     help="write the admittance matrix in coordinate text format")
    sim.set_defaults(func=cmd_simulate)

    tune = sub.add_parser("tune-epc", help="size and allocate EPC droops")
    tune.add_argument("--problem", required=True, help="tuning problem JSON")
    tune.add_argument("--mode", choices=("complement", "replacement"),
                      help="override the problem mode")
    tune.add_argument("--out", help="write the tuning result JSON here")
    tune.add_argument("--refine-scenario",
                      help="scenario used to check and refine the droops by simulation")
    tune.set_defaults(func=cmd_tune_epc)

    ss = sub.add_parser("ss-freq", help="steady-state frequency deviation after a loss")
    ss.add_argument("--dp", type=float, required=True, help="lost generation (MW)")
    ss.add_argument("--beta-g", type=float, required=True, help="generator stiffness (MW/Hz)")
    ss.add_argument("--beta-h", type=float, help="link stiffness (MW/Hz), default 0")
    ss.add_argument("--df-target", type=float,
                    help="solve for the link stiffness giving this deviation (Hz)")
    ss.add_argument("--f-n", type=float, help="nominal frequency (Hz)")
    ss.add_argument("--f-fcrd", type=float, help="FCR-D activation threshold (Hz)")
    ss.add_argument("--f-tfl", type=float, help="EPC activation threshold (Hz)")
    ss.add_argument("--paper-compare", action="store_true",
                    help="also print the published reference values")
    ss.set_defaults(func=cmd_ss_freq)

    val = sub.add_parser("validate", help="check scenario files")
    val.add_argument("scenario", nargs="+", help="scenario JSON file(s)")
    val.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
