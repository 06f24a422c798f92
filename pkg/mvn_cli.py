#!/usr/bin/env python

"""Batch runs for the mVN hierarchy: symbolic checks, flow evolution and surface inducing

Subcommands:
    verify     exact symbolic compatibility, telescoping and flux identities
    evolve     time-integrate flow 1 or 2 from a TOML config
    induce     extract spinors from an immersion (or read them) and rebuild the surface
    dbar-test  quick self-check of the spectral d-bar machinery
"""

import argparse
import csv
import inspect
import os
import sys
import traceback

from typing import Dict, List, Optional

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

if THIS_DIR not in sys.path:
    sys.path.append(THIS_DIR)

import numpy as np

import diffop_algebra
import mvn_const
import mvn_flow
import mvn_utils
import mvn_verifier
import pip_import
import spectral_field
import weierstrass_inducing

from mvn_utils import GridIndex, is_ipython

pip_import.pip_import("tqdm")

from tqdm import tqdm

###############################################################################
# Utilities
###############################################################################


def print_banner(title: str, char: str = "="):
    print(char * 80)
    print(title)
    print(char * 80)


def print_table(rows: List[List[str]], headers: List[str]):
    widths = [max(len(str(cell)) for cell in column) for column in zip(headers, *rows)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)))


def parse_perturbation(text: str) -> Dict[str, str]:
    """NAME or NAME=EXPR; a bare NAME takes its default negative-control value"""
    name, sep, expr = text.partition("=")
    name = name.strip()
    if sep:
        return {name: expr}
    if name not in mvn_verifier.DEFAULT_PERTURBATIONS:
        raise ValueError(
            f"no default perturbation for {name!r}; give NAME=EXPR or one of {sorted(mvn_verifier.DEFAULT_PERTURBATIONS)}"
        )
    return {name: mvn_verifier.DEFAULT_PERTURBATIONS[name]}


def induce_mesh_path(out: Optional[str]) -> str:
    """--out may name the OBJ file itself or the directory to put surface.obj in"""
    if out is None:
        return os.path.join(mvn_const.DEFAULT_OUTPUT_DIR, "induce", "surface.obj")
    if out.lower().endswith(".obj"):
        return out
    return os.path.join(out, "surface.obj")


###############################################################################
# Subcommands
###############################################################################


def run_verify(args) -> int:
    overrides: Dict[str, object] = {}
    if args.operators:
        with open(args.operators, "r", encoding="utf8") as f:
            definitions = diffop_algebra.parse_definitions(f)
        overrides.update(mvn_verifier.overrides_from_definitions(definitions))
    for perturbation in args.perturb or ():
        overrides.update(parse_perturbation(perturbation))
    triple = mvn_verifier.build_triple_n2(overrides)

    if args.progress_bar:

        def progress(checks):
            return tqdm(checks, desc="verify", unit="check")

    else:
        progress = iter
    results = mvn_verifier.run_checks(triple, progress=progress)

    print_banner("mVN symbolic identities")
    rows = [[r.name, r.status, str(r.term_count), mvn_utils.format_elapsed(r.elapsed)] for r in results]
    print_table(rows, ["check", "status", "terms", "time"])
    failed = [r for r in results if not r.is_zero]
    for result in failed:
        print()
        print(f"{result.name} residual:")
        print(f"    {result.residual}")

    emit_dir = args.emit or args.out
    if emit_dir:
        out_dir = mvn_utils.ensure_dir(emit_dir)
        written = mvn_verifier.emit_operators(out_dir, triple)
        record = {"overrides": {k: str(v) for k, v in overrides.items()}, "emitted": written}
        mvn_utils.write_json_record(os.path.join(out_dir, mvn_const.RESOLVED_CONFIG_FILENAME), record)
        print(f"Wrote {len(written)} operator files to {out_dir}")

    print("=" * 80)
    if failed:
        print(f"{len(failed)} of {len(results)} checks NONZERO")
        return mvn_const.EXIT_FAILED
    print(f"All {len(results)} checks ZERO")
    return mvn_const.EXIT_OK


def evolve_config(args) -> mvn_flow.EvolveConfig:
    if args.config:
        config = mvn_flow.EvolveConfig.from_file(args.config)
    else:
        config = mvn_flow.EvolveConfig()
    return config.with_overrides(
        flow_steps=args.steps,
        flow_dt=args.dt,
        flow_scheme=args.scheme,
        flow_dealias=False if args.no_dealias else None,
        grid_n=args.n,
        ic_seed=args.seed,
        output_dir=args.out,
    )


def run_evolve(args) -> int:
    config = evolve_config(args)
    try:
        result = mvn_flow.evolve(config, progress_bar=args.progress_bar)
    except mvn_flow.FlowBlowUpError as err:
        print("!" * 80)
        print(f"Blow-up: {err}")
        if err.diagnostics is not None:
            print(f"Last diagnostics: {err.diagnostics}")
        print("!" * 80)
        return mvn_const.EXIT_FAILED
    final = result.diagnostics[-1]
    print_banner(f"flow {config.flow.n_flow} on n={config.grid.n}")
    print(f"steps:            {config.flow.steps}")
    print(f"t_final:          {final.t:.6g}")
    print(f"S:                {result.diagnostics[0].S:.12g} -> {final.S:.12g}")
    print(f"final S drift:    {final.s_drift_rel:.3e}")
    print(f"snapshots:        {len(result.snapshots)} in {config.output.dir}")
    print(f"elapsed:          {mvn_utils.format_elapsed(result.elapsed)}")
    return mvn_const.EXIT_OK


def _induce_inputs(args):
    """(immersion, spinors, willmore radius, expected willmore) from --builtin or --input"""
    if args.builtin:
        chart = None
        if args.n is not None or args.extent is not None:
            default = weierstrass_inducing.DEFAULT_BUILTIN_CHARTS[args.builtin]
            n = args.n if args.n is not None else default.n
            if default.is_periodic:
                chart = weierstrass_inducing.Chart.periodic(n, default.extent[1] - default.extent[0])
            else:
                extent = default.extent if args.extent is None else (-args.extent, args.extent, -args.extent, args.extent)
                chart = weierstrass_inducing.Chart.open(n, extent)
        surface = weierstrass_inducing.builtin_surface(args.builtin, chart)
        return surface.immersion, None, surface.willmore_radius, surface.willmore_expected
    if not os.path.isdir(args.input):
        raise FileNotFoundError(f"input directory not found: {args.input}")
    immersion_paths = [os.path.join(args.input, f) for f in weierstrass_inducing.IMMERSION_FILES]
    if all(os.path.isfile(p) for p in immersion_paths):
        return weierstrass_inducing.read_immersion(args.input), None, None, None
    return None, weierstrass_inducing.read_spinors(args.input), None, None


def run_induce(args) -> int:
    try:
        X, psi, radius, expected = _induce_inputs(args)
    except (OSError, spectral_field.FieldFormatError, KeyError) as err:
        print(f"Error reading input: {err}")
        return mvn_const.EXIT_ERROR
    basepoint = GridIndex.from_str(args.basepoint) if args.basepoint else None
    try:
        induced, rows = weierstrass_inducing.surface_report(
            X=X, psi=psi, basepoint=basepoint, willmore_radius=radius, willmore_expected=expected
        )
    except (
        weierstrass_inducing.NonConformalError,
        weierstrass_inducing.BranchDiscontinuityError,
        weierstrass_inducing.FormsNotClosedError,
        weierstrass_inducing.DegenerateMetricError,
    ) as err:
        print("!" * 80)
        print(f"Inducing failed: {err}")
        print("!" * 80)
        return mvn_const.EXIT_FAILED

    out_dir = mvn_utils.ensure_dir(os.path.dirname(os.path.abspath(args.mesh)))
    weierstrass_inducing.export_obj(induced.immersion, args.mesh)
    report_path = args.report or os.path.splitext(args.mesh)[0] + "_report.csv"
    with open(report_path, "w", newline="", encoding="utf8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["quantity", "value", "tolerance", "status"])
        for row in rows:
            tolerance = "" if row.tolerance is None else repr(row.tolerance)
            writer.writerow([row.quantity, repr(float(row.value)), tolerance, row.status])
    resolved = {
        "source": args.builtin or os.path.abspath(args.input),
        "chart": induced.immersion.chart,
        "basepoint": basepoint,
        "mesh": os.path.abspath(args.mesh),
        "report": os.path.abspath(report_path),
    }
    mvn_utils.write_json_record(os.path.join(out_dir, mvn_const.RESOLVED_CONFIG_FILENAME), resolved)

    print_banner(f"induced surface: {args.builtin or args.input}")
    table = [
        [row.quantity, f"{row.value:.6e}", "" if row.tolerance is None else f"{row.tolerance:.1e}", row.status]
        for row in rows
    ]
    print_table(table, ["quantity", "value", "tolerance", "status"])
    print(f"mesh: {args.mesh}")
    print(f"report: {report_path}")
    print("=" * 80)
    if not all(row.passed for row in rows):
        return mvn_const.EXIT_FAILED
    return mvn_const.EXIT_OK


def dbar_checks(n: int = mvn_const.DEFAULT_GRID_N, seed: int = mvn_const.DEFAULT_SEED) -> List[List[object]]:
    """[name, value, tolerance] rows; a None value means the check passed by raising"""
    grid = spectral_field.make_grid(n)
    x, y = grid.coords()
    rows: List[List[object]] = []
    worst = 0.0
    for mode in ((1, 0), (0, 1), (2, -3), (n // 3 - 1, 1)):
        f = spectral_field.ComplexField(grid, np.exp(1j * (mode[0] * x + mode[1] * y)))
        recovered = spectral_field.dbar_inverse(spectral_field.wirtinger(f, "dzbar"))
        worst = max(worst, mvn_utils.rel_max_norm((recovered - f).samples, f.samples))
    rows.append(["single-mode recovery", worst, 1e-13])

    try:
        spectral_field.dbar_inverse(spectral_field.ComplexField(grid, 1.0 + np.cos(x)))
    except spectral_field.GaugeObstructionError:
        rows.append(["gauge obstruction raised", None, None])
    else:
        rows.append(["gauge obstruction raised", float("inf"), None])

    p = mvn_flow.initial_condition(grid, mvn_flow.ICConfig(kind="random", seed=seed))
    rows.append(["parseval", spectral_field.parseval_residual(p), 1e-12])

    mixed = spectral_field.mixed_derivative(p, 1, 1)
    laplacian = (spectral_field.partial(p, 0, 2) + spectral_field.partial(p, 1, 2)) * 0.25
    rows.append(["d dbar = laplacian / 4", mvn_utils.rel_max_norm((mixed - laplacian).samples, mixed.samples), 1e-12])
    return rows


def run_dbar_test(args) -> int:
    n = args.n or mvn_const.DEFAULT_GRID_N
    seed = mvn_const.DEFAULT_SEED if args.seed is None else args.seed
    rows = dbar_checks(n, seed)
    table = []
    failed = 0
    for name, value, tolerance in rows:
        if value is None:
            table.append([name, "-", "-", "OK"])
            continue
        ok = value <= tolerance if tolerance is not None else False
        failed += not ok
        table.append([name, f"{value:.3e}", "-" if tolerance is None else f"{tolerance:.0e}", "OK" if ok else "FAIL"])
    print_banner("spectral d-bar self-check")
    print_table(table, ["check", "value", "tolerance", "status"])
    if args.out:
        out_dir = mvn_utils.ensure_dir(args.out)
        record = {
            "n": n,
            "seed": seed,
            "checks": [{"name": name, "value": value, "tolerance": tol} for name, value, tol in rows],
        }
        mvn_utils.write_json_record(os.path.join(out_dir, mvn_const.RESOLVED_CONFIG_FILENAME), record)
        print(f"record: {out_dir}")
    print("=" * 80)
    return mvn_const.EXIT_FAILED if failed else mvn_const.EXIT_OK


###############################################################################
# CLI
###############################################################################

# common flags a subcommand has no use for; giving one is an input error
UNSUPPORTED_COMMON_FLAGS = {
    "verify": ("config", "seed"),
    "induce": ("config", "seed"),
    "dbar-test": ("config",),
}


def get_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML config file; command-line flags override its values")
    common.add_argument("-o", "--out", help="Output directory (verify: emit directory; induce: mesh path or directory)")
    common.add_argument("--seed", type=int, help="Seed for random initial conditions")
    common.add_argument("--threads", type=int, help="Worker threads for scipy.fft; default lets scipy decide")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="Log INFO messages; give twice for DEBUG messages"
    )
    common.add_argument(
        "--no-progress-bar", dest="progress_bar", action="store_false", help="Don't show tqdm progress bars"
    )

    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    verify = subparsers.add_parser(
        "verify",
        parents=[common],
        help="Check the symbolic identities in exact arithmetic",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    verify.add_argument("--operators", metavar="FILE", help="File of 'name = expr' lines overriding matrices")
    verify.add_argument(
        "--perturb",
        metavar="NAME[=EXPR]",
        action="append",
        help=(
            "Override one entry, e.g. V12=-4*d(p); a bare NAME uses its default negative control. Choices for bare"
            f" names: {sorted(mvn_verifier.DEFAULT_PERTURBATIONS)}"
        ),
    )
    verify.add_argument("--emit", metavar="DIR", help="Write every operator in the canonical grammar to DIR")
    verify.set_defaults(func=run_verify)

    evolve = subparsers.add_parser(
        "evolve",
        parents=[common],
        help="Time-integrate flow 1 or 2",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    evolve.add_argument("--steps", type=int, help="Number of steps")
    evolve.add_argument("--dt", type=float, help="Time step; default is the stability heuristic")
    evolve.add_argument("--n", type=int, help="Grid size")
    evolve.add_argument("--scheme", choices=mvn_const.SCHEMES, help="Time stepper")
    evolve.add_argument("--no-dealias", action="store_true", help="Turn off the 2/3-rule truncation")
    evolve.set_defaults(func=run_evolve)

    induce = subparsers.add_parser(
        "induce",
        parents=[common],
        help="Rebuild a surface from spinors and report every residual",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    source = induce.add_mutually_exclusive_group(required=True)
    source.add_argument("--builtin", choices=mvn_const.BUILTIN_SURFACES, help="Closed-form test surface")
    source.add_argument("--input", metavar="DIR", help="Directory holding X1/X2/X3.txt or psi1/psi2.txt")
    induce.add_argument("--report", help="Residual report CSV; defaults to <mesh>_report.csv")
    induce.add_argument("--basepoint", metavar="I,J", help="Sample where the induced surface is pinned to 0")
    induce.add_argument("--n", type=int, help="Samples per axis for built-in surfaces")
    induce.add_argument("--extent", type=float, help="Half-width of the open chart for built-in surfaces")
    induce.set_defaults(func=run_induce)

    dbar_test = subparsers.add_parser(
        "dbar-test",
        parents=[common],
        help="Quick spectral d-bar self-check",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    dbar_test.add_argument("--n", type=int, help="Grid size")
    dbar_test.set_defaults(func=run_dbar_test)
    return parser


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = get_parser()
    args = parser.parse_args(argv)
    mvn_utils.setup_logging(args.verbose)
    unsupported = UNSUPPORTED_COMMON_FLAGS.get(args.command, ())
    rejected = [f"--{name}" for name in unsupported if getattr(args, name) is not None]
    if rejected:
        print(f"Error: {', '.join(rejected)} does not apply to {args.command}")
        return mvn_const.EXIT_ERROR
    if args.threads is not None:
        spectral_field.set_fft_workers(args.threads)
    if args.command == "induce":
        args.mesh = induce_mesh_path(args.out)
    try:
        return args.func(args)
    except (mvn_flow.ConfigError, diffop_algebra.ParseError, diffop_algebra.OperatorTypeError, OSError, KeyError) as err:
        print(f"Error: {err}")
        return mvn_const.EXIT_ERROR
    except Exception:  # pylint: disable=broad-except
        traceback.print_exc()
        return mvn_const.EXIT_ERROR


if __name__ == "__main__" and not is_ipython():
    sys.exit(main())
