#!/usr/bin/env python3
"""
Command-line front end: run scenarios, verify properties, inspect inertia, re-plot
trajectories and measure convergence order.
"""

import argparse
import concurrent.futures
import json
import logging
import os
import sys
import time
import traceback

import numpy as np

from lgvci_driver import run
from lgvci_scenario import (
    ScenarioError,
    load_scenario,
    read_trajectory,
    render_energy_svg,
    write_events,
    write_summary,
    write_trajectory,
)
from lgvci_verify import DEFAULT_SEED, SUITES, convergence_study, run_suites

script_dir = os.path.dirname(os.path.abspath(__file__))
log_path = os.path.join(script_dir, "debug.log")

logger = logging.getLogger("lgvci_cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_ZENO = 3
EXIT_SOLVER = 4
EXIT_VERIFY = 5

TERMINATION_EXIT = {"completed": EXIT_OK, "zeno_guard": EXIT_ZENO, "solver_failure": EXIT_SOLVER}


def setup_logging(debug=False):
    handlers = [logging.StreamHandler()]
    if debug:
        handlers.append(logging.FileHandler(log_path))
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def _read_scenario(path):
    with open(path, encoding="utf-8") as f:
        return load_scenario(f.read())


def run_scenario_file(path, out_dir):
    """
    Load, simulate and write one scenario.

    Top-level so it can be shipped to a worker process.

    Returns:
        Dict with the scenario name, output directory and run summary
    """
    scenario = _read_scenario(path)
    start_time = time.time()
    logger.info(f"Running scenario {scenario.name} ({scenario.sim.M} steps of h = {scenario.sim.h})")
    traj = run(scenario.initial, scenario.world, scenario.sim, scenario.solver)

    target = os.path.join(out_dir, scenario.name)
    os.makedirs(target, exist_ok=True)
    outputs = scenario.outputs
    with open(os.path.join(target, outputs["trajectory"]), "w", encoding="utf-8", newline="") as f:
        write_trajectory(traj, scenario.world, f)
    with open(os.path.join(target, outputs["events"]), "w", encoding="utf-8", newline="") as f:
        write_events(traj, scenario.world, f)
    with open(os.path.join(target, outputs["plot"]), "w", encoding="utf-8", newline="\n") as f:
        f.write(render_energy_svg(traj, scenario.world))
    summary = write_summary(traj, scenario.world, os.path.join(target, outputs["summary"]))

    logger.info(f"Scenario {scenario.name} finished in {time.time() - start_time:.2f}s")
    return {"name": scenario.name, "out": target, "summary": summary}


def _report_run(result):
    summary = result["summary"]
    print(
        f"LGVCI: {result['name']}: {summary['termination']}, {summary['events']} impacts, "
        f"energy drift {summary['energy_drift']:.3e} ({summary['energy_drift_direction']}) -> {result['out']}"
    )
    return TERMINATION_EXIT[summary["termination"]]


def _worst_exit(codes):
    for code in (EXIT_ERROR, EXIT_SOLVER, EXIT_ZENO):
        if code in codes:
            return code
    return EXIT_OK


def cmd_run(args):
    paths = args.scenario
    if len(paths) == 1:
        try:
            return _report_run(run_scenario_file(paths[0], args.out))
        except (ScenarioError, OSError) as e:
            logger.error(f"Scenario {paths[0]} failed: {e}")
            print(f"LGVCI Error: {e}")
            return EXIT_ERROR

    max_workers = min(len(paths), 8)
    logger.info(f"Running {len(paths)} scenarios with {max_workers} workers")
    codes = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as executor:
        future_to_path = {executor.submit(run_scenario_file, path, args.out): path for path in paths}
        for future in concurrent.futures.as_completed(future_to_path):
            path = future_to_path[future]
            try:
                codes.append(_report_run(future.result()))
            except Exception as e:
                logger.error(f"Scenario {path} failed: {e}")
                logger.error(traceback.format_exc())
                print(f"LGVCI Error: {path}: {e}")
                codes.append(EXIT_ERROR)
    return _worst_exit(codes)


def cmd_verify(args):
    names = args.suite or ["all"]
    print(f"LGVCI: Running {', '.join(names)} with seed {args.seed}")
    results = run_suites(names, args.seed)
    failed = 0
    for suite, rows in results.items():
        print(f"LGVCI: Suite {suite}")
        for row in rows:
            print(f"LGVCI:   {row.line()}")
            failed += not row.passed
    if failed:
        print(f"LGVCI: {failed} propert{'y' if failed == 1 else 'ies'} failed")
        return EXIT_VERIFY
    print("LGVCI: All properties hold")
    return EXIT_OK


def _matrix_lines(label, m):
    rows = "\n".join("    " + " ".join(f"{v: .10f}" for v in row) for row in m)
    return f"LGVCI: {label}\n{rows}"


def cmd_inertia(args):
    try:
        scenario = _read_scenario(args.scenario)
    except (ScenarioError, OSError) as e:
        print(f"LGVCI Error: {e}")
        return EXIT_ERROR
    source = "override" if scenario.J_override is not None else scenario.body_def["type"]
    print(f"LGVCI: {scenario.name}: mass {scenario.mass}, inertia from {source}")
    print(_matrix_lines("J", scenario.body.J))
    print(_matrix_lines("J_d", scenario.body.J_d))
    if scenario.centroid is not None:
        print(f"LGVCI: Quadrature centroid {np.array2string(scenario.centroid, precision=6)}")
    return EXIT_OK


def cmd_plot(args):
    try:
        with open(args.traj, encoding="utf-8", newline="") as f:
            traj = read_trajectory(f)
        if args.scenario:
            w = _read_scenario(args.scenario).world
            svg = render_energy_svg(traj, w)
        else:
            summary_path = os.path.join(os.path.dirname(os.path.abspath(args.traj)), "summary.json")
            with open(summary_path, encoding="utf-8") as f:
                summary = json.load(f)
            J_inv = np.linalg.inv(np.array(summary["J"], dtype=float))
            svg = render_energy_svg(traj, None, mass=summary["mass"], J_inv=J_inv, g=summary["gravity"])
    except (ScenarioError, OSError, ValueError, KeyError) as e:
        print(f"LGVCI Error: {e}")
        return EXIT_ERROR
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write(svg)
    print(f"LGVCI: Energy plot written to {args.out}")
    return EXIT_OK


def cmd_convergence(args):
    try:
        hs = [float(v) for v in args.h.split(",") if v.strip()]
    except ValueError:
        print(f"LGVCI Error: --h must be a comma-separated list of numbers, got {args.h!r}")
        return EXIT_USAGE
    if len(hs) < 3:
        print("LGVCI Error: --h needs at least three step sizes")
        return EXIT_USAGE
    try:
        scenario = _read_scenario(args.scenario)
        errors, order = convergence_study(
            scenario.initial, scenario.world, hs, args.horizon, args.substeps, scenario.solver
        )
    except (ScenarioError, OSError, ValueError) as e:
        print(f"LGVCI Error: {e}")
        return EXIT_ERROR
    for h, err in zip(hs, errors, strict=True):
        print(f"LGVCI: h = {h:.6g}: state error {err:.6e}")
    if order is None:
        print("LGVCI: Errors are at rounding level; order fit skipped")
    else:
        print(f"LGVCI: Fitted order {order:.3f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(description="Lie group variational collision integrator for a rigid body")
    parser.add_argument("--debug", action="store_true", help="Enable debug output and write debug.log")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Simulate one or more scenarios")
    p_run.add_argument("--scenario", action="append", required=True, help="Scenario JSON file (repeatable)")
    p_run.add_argument("--out", default="out", help="Output directory")
    p_run.set_defaults(handler=cmd_run)

    p_verify = sub.add_parser("verify", help="Run property suites")
    p_verify.add_argument("--suite", action="append", choices=["all", *SUITES], help="Suite name (repeatable)")
    p_verify.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Seed for randomised checks")
    p_verify.set_defaults(handler=cmd_verify)

    p_inertia = sub.add_parser("inertia", help="Print the inertia of a scenario body")
    p_inertia.add_argument("--scenario", required=True)
    p_inertia.set_defaults(handler=cmd_inertia)

    p_plot = sub.add_parser("plot", help="Re-render the energy plot of a stored trajectory")
    p_plot.add_argument("--traj", required=True, help="trajectory.csv written by run")
    p_plot.add_argument("--out", required=True, help="SVG file to write")
    p_plot.add_argument("--scenario", help="Scenario for the world parameters instead of summary.json")
    p_plot.set_defaults(handler=cmd_plot)

    p_conv = sub.add_parser("convergence", help="Observed order against the smooth reference flow")
    p_conv.add_argument("--scenario", required=True)
    p_conv.add_argument("--h", required=True, help="Comma-separated step sizes, at least three")
    p_conv.add_argument("--horizon", type=float, default=1.0)
    p_conv.add_argument("--substeps", type=int, default=10000, help="Reference integrator steps over the horizon")
    p_conv.set_defaults(handler=cmd_convergence)
    return parser


def main(argv=None):
    """Parse arguments, dispatch to a subcommand and exit with its status."""
    args = build_parser().parse_args(argv)
    setup_logging(args.debug)
    try:
        logger.info(f"Command {args.command} started")
        code = args.handler(args)
    except Exception as e:
        logger.error(f"Unexpected error in main function: {e}")
        logger.error(traceback.format_exc())
        print(f"LGVCI Error: {e}")
        code = EXIT_ERROR
    sys.exit(code)


if __name__ == "__main__":
    main()
