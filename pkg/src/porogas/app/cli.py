"""Command-line entry points: run, check-thermo, gen-perm, diff."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..diagnostics import make_record
from ..msd_flow import MILLIDARCY
from ..stepper import InvariantViolation, StepFailure, Stepper, run
from .config import ConfigError, load_config, load_field_spec
from .fields import RasterError, cells_to_grid, gen_permeability, write_raster

EXIT_OK, EXIT_DIFF, EXIT_CONFIG, EXIT_STEP, EXIT_INVARIANT = 0, 1, 2, 3, 4

log = logging.getLogger("porogas")


def _run_info(cfg, args, n_cells) -> str:
    lines = [
        f"config: {cfg.source}",
        f"seed: {args.seed if args.seed is not None else cfg.seed}",
        f"cells: {n_cells}",
        f"components: {', '.join(cfg.names)}",
        f"millidarcy: {MILLIDARCY:.7e} m^2",
        "units: SI; densities mol/m^3, pressure Pa, time s, energy J per metre depth",
    ]
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    from .io import Snapshot, write_timeseries, write_vtk
    from .plots import render_report
    from .scenario import build_problem, controls_of

    cfg = load_config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem, perm, c0, phi0 = build_problem(cfg, args.seed)
    stepper = Stepper(problem, controls_of(cfg), strict=args.strict)
    vtk_every = cfg.vtk_every if args.vtk_every is None else args.vtk_every
    max_steps = cfg.max_steps if args.max_steps is None else args.max_steps
    (out / "run_info.txt").write_text(_run_info(cfg, args, problem.mesh.n_cells))
    print(f"md -> m^2 conversion: {MILLIDARCY:.7e}")

    records = []
    warnings = []

    def snapshot(state):
        if vtk_every and state.n % vtk_every == 0:
            snap = Snapshot.from_state(problem.mesh, problem.names, state, perm)
            write_vtk(snap, out / f"state_{state.n:05d}.vtk")

    def callback(state, report):
        records.append(make_record(state, problem, report))
        if report is not None:
            warnings.extend(f"step {state.n}: {w}" for w in report.warnings)
        snapshot(state)

    state = stepper.initial_state(c0, phi0)
    code = EXIT_OK
    try:
        state, reports = run(stepper, state, cfg.t_end, max_steps, callback)
    except StepFailure as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        code = EXIT_STEP
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        code = EXIT_INVARIANT
    write_timeseries(records, problem.names, out / "timeseries.csv")
    render_report(records, problem.names, out)
    if warnings:
        (out / "warnings.txt").write_text("\n".join(warnings) + "\n")
    if code == EXIT_OK:
        if vtk_every and state.n % vtk_every:
            snapshot_final = Snapshot.from_state(problem.mesh, problem.names, state, perm)
            write_vtk(snapshot_final, out / f"state_{state.n:05d}.vtk")
        print(f"completed {state.n} steps, t = {state.t:.6g} s, output in {out}")
    return code


def cmd_check_thermo(args) -> int:
    from .checks import run_thermo_checks
    from .scenario import mixture_of

    cfg = load_config(args.config)
    eos = mixture_of(cfg).eos()
    results = run_thermo_checks(eos, n=args.samples, seed=args.seed or 0)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_DIFF


def cmd_gen_perm(args) -> int:
    from ..mesh import build_structured_triangulation
    from .io import Snapshot, write_vtk

    (nx, ny, Lx, Ly), spec, seed = load_field_spec(args.spec)
    seed = seed if args.seed is None else args.seed
    mesh = build_structured_triangulation(nx, ny, Lx, Ly)
    perm = gen_permeability(spec, mesh, seed)
    out = Path(args.out)
    if out.suffix == ".vtk":
        z = np.zeros(mesh.n_cells)
        snap = Snapshot(mesh, [], np.zeros((mesh.n_cells, 0)), z, z, np.zeros((mesh.n_cells, 0)), perm,
                        np.zeros(6 * mesh.n_cells))
        write_vtk(snap, out)
    else:
        write_raster(cells_to_grid(perm / MILLIDARCY, nx, ny), out)
    print(f"permeability [{perm.min() / MILLIDARCY:.4g}, {perm.max() / MILLIDARCY:.4g}] md -> {out}")
    return EXIT_OK


def cmd_diff(args) -> int:
    from .io import diff_csv

    problems = diff_csv(args.a, args.b, args.rtol)
    for line in problems[:50]:
        print(line)
    if len(problems) > 50:
        print(f"... {len(problems) - 50} more")
    return EXIT_OK if not problems else EXIT_DIFF


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="porogas", description="Compositional gas flow in deformable porous media.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a simulation")
    p.add_argument("config")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--vtk-every", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--strict", action="store_true", help="treat open-system warnings as failures")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-thermo", help="property checks for the configured mixture")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_check_thermo)

    p = sub.add_parser("gen-perm", help="write a permeability field (raster in md, or .vtk)")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_perm)

    p = sub.add_parser("diff", help="compare two time-series CSV files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--rtol", type=float, default=0.0)
    p.set_defaults(func=cmd_diff)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RasterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        return EXIT_STEP
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
