"""Command-line entry point: fit, scan, evaluate, simulate and inspect field regressions."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import get_args

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import data_io
from .config_loader import default_config_path, load_config
from .config_models import (
    FitOptions,
    GsrpdeConfig,
    InvalidConfiguration,
    RunConfig,
    SelectionSettings,
    StudyCase,
)
from .errors import (
    ConvergenceError,
    FamilyDomainError,
    MeshFormatError,
    MeshValidationError,
    ObservationError,
    SolverError,
    StatisticsError,
)
from .fem import FemSystem, ObservationSet, assemble_mass, assemble_stiffness, evaluate_field
from .inference import field_stats
from .mesh import TriangularMesh, load_mesh, load_regions
from .pirls import fit
from .selection import default_lambda_grid, gcv_scan
from .simbench import HorseshoeSpec, run_areal_study, run_geostat_study, shipped_path

logger = logging.getLogger("gsrpde")

THREADS_ENV_VAR = "GSRPDE_THREADS"
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

_INVALID_ERRORS = (
    InvalidConfiguration,
    MeshFormatError,
    MeshValidationError,
    ObservationError,
    FamilyDomainError,
    ValueError,
)
_NUMERICAL_ERRORS = (SolverError, ConvergenceError, StatisticsError)


class UsageError(Exception):
    """Raised instead of exiting when argument parsing fails."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: error: {message}")


def _add_fit_arguments(parser: argparse.ArgumentParser, *, allow_lambda: bool) -> None:
    parser.add_argument("--mesh", type=Path, required=True, help="Mesh file ('K T', nodes, triangles).")
    parser.add_argument("--data", type=Path, required=True, help="Observation CSV (y, x1..xq, px,py | region_id).")
    parser.add_argument("--regions", type=Path, default=None, help="Region file for areal data.")
    parser.add_argument(
        "--family",
        choices=["gaussian", "poisson", "bernoulli", "gamma"],
        default="gaussian",
        help="Response family (canonical link).",
    )
    if allow_lambda:
        choice = parser.add_mutually_exclusive_group()
        choice.add_argument("--lambda", dest="lam", type=float, default=None, help="Fixed smoothing parameter.")
        choice.add_argument("--gcv", action="store_true", help="Select lambda by GCV over a log grid.")
    parser.add_argument("--grid-min", type=float, default=None, help="Smallest lambda of the GCV grid.")
    parser.add_argument("--grid-max", type=float, default=None, help="Largest lambda of the GCV grid.")
    parser.add_argument("--grid-count", type=int, default=None, help="Number of GCV grid values.")
    parser.add_argument("--gamma", type=float, default=None, help="GCV inflation factor (>= 1).")
    parser.add_argument("--tol", type=float, default=None, help="Relative objective change at convergence.")
    parser.add_argument("--max-iter", type=int, default=None, help="PIRLS iteration limit.")
    parser.add_argument("--strict", action="store_true", help="Exit with status 2 when PIRLS does not converge.")
    parser.add_argument(
        "--grid", nargs=2, type=int, metavar=("NX", "NY"), default=None,
        help="Write field.csv on an NX x NY bounding-box grid instead of nodal values.",
    )
    parser.add_argument("--out", type=Path, default=Path("."), help="Output directory.")


def build_main_parser() -> argparse.ArgumentParser:
    """Construct the ``gsrpde`` parser with one sub-parser per command."""

    parser = _Parser(
        prog="gsrpde",
        description="Generalized spatial regression with a Laplacian penalty on triangular meshes.",
    )
    parser.add_argument(
        "--config",
        type=Path,
        default=default_config_path(),
        help="Path to gsrpde.toml (defaults to the packaged config).",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging.")
    parser.add_argument(
        "--threads", type=int, default=None,
        help=f"Worker threads for lambda grids and replicates (fallback: ${THREADS_ENV_VAR}).",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    _add_fit_arguments(commands.add_parser("fit", help="Fit at a fixed lambda or select it by GCV."), allow_lambda=True)
    _add_fit_arguments(commands.add_parser("gcv-scan", help="Same as 'fit --gcv'."), allow_lambda=False)

    evaluate = commands.add_parser("eval", help="Evaluate a fitted field at points or on a grid.")
    evaluate.add_argument("--fit", type=Path, required=True, help="fit.json written by 'fit'.")
    evaluate.add_argument("--mesh", type=Path, required=True)
    where = evaluate.add_mutually_exclusive_group(required=True)
    where.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"))
    where.add_argument("--points", type=Path, help="CSV with px,py (or x,y) columns.")
    evaluate.add_argument("--out", type=Path, default=Path("."))

    simulate = commands.add_parser("simulate", help="Run a horseshoe simulation study.")
    simulate.add_argument("--case", choices=get_args(StudyCase), required=True)
    simulate.add_argument("--reps", type=int, default=None)
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--phi", type=float, default=None, help="Gamma scale (geostat case).")
    simulate.add_argument("--n", type=int, default=None, help="Number of locations (geostat case).")
    simulate.add_argument("--mesh", type=Path, default=None, help="Override the shipped horseshoe mesh.")
    simulate.add_argument("--regions", type=Path, default=None, help="Override the shipped region partition.")
    simulate.add_argument("--grid-count", type=int, default=None, help="Number of GCV grid values.")
    simulate.add_argument("--out", type=Path, default=Path("."))

    stats = commands.add_parser("stats", help="Gaussian sampling covariance of the field at probe points.")
    stats.add_argument("--mesh", type=Path, required=True)
    stats.add_argument("--data", type=Path, required=True)
    stats.add_argument("--regions", type=Path, default=None)
    stats.add_argument("--lambda", dest="lam", type=float, required=True)
    stats.add_argument("--sigma2", type=float, required=True)
    stats.add_argument("--probes", type=Path, required=True, help="CSV with px,py (or x,y) columns.")
    stats.add_argument("--covariates", action="store_true", help="Project out the covariates in the data file.")
    stats.add_argument("--out", type=Path, default=Path("."))

    export = commands.add_parser("export-matrices", help="Dump R0, R1 and optionally Psi as 'i j value' text.")
    export.add_argument("--mesh", type=Path, required=True)
    export.add_argument("--data", type=Path, default=None)
    export.add_argument("--regions", type=Path, default=None)
    export.add_argument("--out", type=Path, default=Path("."))
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _resolve_threads(flag: int | None, config: GsrpdeConfig) -> int:
    if flag is not None:
        threads = flag
    elif os.environ.get(THREADS_ENV_VAR):
        raw = os.environ[THREADS_ENV_VAR]
        try:
            threads = int(raw)
        except ValueError as exc:
            raise InvalidConfiguration(f"{THREADS_ENV_VAR} must be an integer, got '{raw}'") from exc
    else:
        threads = config.runtime.threads
    if threads < 1:
        raise InvalidConfiguration("--threads must be >= 1")
    return threads


def _run_config(args: argparse.Namespace, config: GsrpdeConfig, threads: int) -> RunConfig:
    selection = config.selection.model_dump()
    for key, value in (
        ("lambda_min", args.grid_min),
        ("lambda_max", args.grid_max),
        ("lambda_count", args.grid_count),
        ("gamma", args.gamma),
    ):
        if value is not None:
            selection[key] = value
    options = config.solver.model_dump()
    if args.tol is not None:
        options["tol"] = args.tol
    if args.max_iter is not None:
        options["max_iter"] = args.max_iter
    options["verbose"] = options["verbose"] or args.verbose > 0
    gcv = args.command == "gcv-scan" or getattr(args, "gcv", False)
    try:
        return RunConfig(
            command=args.command,
            mesh=args.mesh,
            data=args.data,
            regions=args.regions,
            family=args.family,
            lam=getattr(args, "lam", None),
            gcv=gcv,
            selection=SelectionSettings(**selection),
            options=FitOptions(**options),
            seed=config.simulation.seed,
            out=args.out,
            threads=threads,
            strict=args.strict,
        )
    except ValidationError as exc:
        raise InvalidConfiguration(_first_error(exc)) from exc


def _first_error(exc: ValidationError) -> str:
    errors = exc.errors()
    if not errors:
        return str(exc)
    first = errors[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    message = str(first.get("msg", exc))
    return f"{location}: {message}" if location else message


def _load_inputs(
    mesh_path: Path, data_path: Path | None, regions_path: Path | None
) -> tuple[TriangularMesh, ObservationSet | None]:
    mesh = load_mesh(mesh_path)
    regions = load_regions(regions_path, mesh) if regions_path is not None else None
    if data_path is None:
        return mesh, None
    frame = data_io.read_data_frame(data_path)
    if data_io.is_areal(frame) and regions is None:
        raise InvalidConfiguration("--regions is required for areal data (region_id column present)")
    if not data_io.is_areal(frame) and regions is not None:
        raise InvalidConfiguration("--regions only applies to areal data; this table has point columns (px,py)")
    return mesh, data_io.observations_from_frame(frame, data_path, regions)


def _field_frame(mesh: TriangularMesh, coeffs: np.ndarray, grid: list[int] | None) -> pd.DataFrame:
    if grid is None:
        return data_io.nodal_frame(mesh, coeffs)
    points = data_io.grid_points(mesh, grid[0], grid[1])
    return data_io.point_frame(points, evaluate_field(mesh, coeffs, points))


def _cmd_fit(run: RunConfig, grid: list[int] | None) -> int:
    assert run.mesh is not None and run.data is not None
    mesh, observations = _load_inputs(run.mesh, run.data, run.regions)
    assert observations is not None
    fem = FemSystem.build(mesh, observations.operator)

    scan = None
    if run.gcv:
        scan = gcv_scan(
            run.family,
            observations,
            fem,
            None,
            default_lambda_grid(run.selection),
            run.selection.gamma,
            run.options,
            threads=run.threads,
        )
        result = scan.best_fit
    else:
        assert run.lam is not None
        result = fit(run.family, observations, fem, None, run.lam, run.options, gamma=run.selection.gamma)

    if not result.converged and run.strict:
        print(
            f"gsrpde: PIRLS did not converge in {result.iterations} iterations at lambda={result.lam:g}",
            file=sys.stderr,
        )
        return EXIT_NUMERICAL

    data_io.write_fit(data_io.fit_document(result, mesh.checksum), run.out / "fit.json")
    data_io.write_table(_field_frame(mesh, result.f_coeffs, grid), run.out / "field.csv")
    if scan is not None:
        data_io.write_table(scan.to_frame(), run.out / "scan.csv")

    beta = ", ".join(f"{name}={value:.6g}" for name, value in zip(result.covariate_names, result.beta))
    edf = "n/a" if result.hat_trace is None else f"{result.hat_trace:.6g}"
    print(
        f"family={result.family} lambda={result.lam:.6g} iterations={result.iterations} "
        f"converged={str(result.converged).lower()} edf={edf}"
        + (f" beta: {beta}" if beta else "")
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    document = data_io.read_fit(args.fit)
    mesh = load_mesh(args.mesh)
    if document.mesh_checksum != mesh.checksum:
        raise ObservationError(f"{args.fit} was fitted on a different mesh than {args.mesh}")
    coeffs = np.asarray(document.f_coeffs, dtype=float)
    if args.grid is not None:
        frame = _field_frame(mesh, coeffs, args.grid)
    else:
        points = data_io.read_points(args.points)
        frame = data_io.point_frame(points, evaluate_field(mesh, coeffs, points))
    data_io.write_table(frame, args.out / "field.csv")
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace, config: GsrpdeConfig, threads: int) -> int:
    sim = config.simulation
    seed = sim.seed if args.seed is None else args.seed
    spec = HorseshoeSpec.from_settings(sim.horseshoe)
    selection = config.selection
    if args.grid_count is not None:
        selection = selection.model_copy(update={"lambda_count": args.grid_count})
    grid = default_lambda_grid(selection)
    mesh = load_mesh(args.mesh or shipped_path("horseshoe.mesh"))

    if args.case == "geostat-gamma":
        updates = {k: v for k, v in (("reps", args.reps), ("phi", args.phi), ("n", args.n)) if v is not None}
        settings = sim.geostat.model_validate({**sim.geostat.model_dump(), **updates})
        study = run_geostat_study(
            mesh, spec, settings, seed, lam_grid=grid, options=config.solver, threads=threads
        )
    else:
        updates = {"reps": args.reps} if args.reps is not None else {}
        settings_a = sim.areal.model_validate({**sim.areal.model_dump(), **updates})
        regions = load_regions(args.regions or shipped_path("horseshoe.regions"), mesh)
        study = run_areal_study(
            mesh, regions, spec, settings_a, seed, lam_grid=grid, options=config.solver, threads=threads
        )

    data_io.write_table(study.replicates, args.out / "replicates.csv")
    data_io.write_table(study.rmse, args.out / "rmse.csv")
    data_io.write_table(study.beta_summary, args.out / "beta_summary.csv")
    for row in study.beta_summary.itertuples(index=False):
        print(f"{row.name}: mean={row.mean:.6g} sd={row.sd:.6g} rmse={row.rmse:.6g} (true {row.true:g})")
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    mesh, observations = _load_inputs(args.mesh, args.data, args.regions)
    assert observations is not None
    if args.covariates and observations.X is None:
        raise InvalidConfiguration("--covariates requires x1..xq columns in the data file")
    fem = FemSystem.build(mesh, observations.operator)
    probes = data_io.read_points(args.probes)
    stats = field_stats(
        mesh, fem, args.lam, args.sigma2, probes, X=observations.X if args.covariates else None
    )
    frame = pd.DataFrame({"x": stats.points[:, 0], "y": stats.points[:, 1], "variance": stats.variance})
    data_io.write_table(frame, args.out / "stats.csv")
    labels = [f"p{i}" for i in range(stats.covariance.shape[0])]
    data_io.write_table(pd.DataFrame(stats.covariance, columns=labels), args.out / "covariance.csv")
    return EXIT_OK


def _cmd_export(args: argparse.Namespace) -> int:
    mesh, observations = _load_inputs(args.mesh, args.data, args.regions)
    data_io.export_coo(assemble_mass(mesh), args.out / "r0.txt")
    data_io.export_coo(assemble_stiffness(mesh), args.out / "r1.txt")
    if observations is not None:
        fem = FemSystem.build(mesh, observations.operator)
        data_io.export_coo(fem.psi, args.out / "psi.txt")
    return EXIT_OK


def run(argv: list[str]) -> int:
    """Parse ``argv``, dispatch the command and map failures to exit codes."""

    parser = build_main_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_INVALID

    _configure_logging(args.verbose)
    try:
        config = load_config(args.config.expanduser() if args.config else None)
        threads = _resolve_threads(args.threads, config)
        if args.command in {"fit", "gcv-scan"}:
            return _cmd_fit(_run_config(args, config, threads), args.grid)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "simulate":
            return _cmd_simulate(args, config, threads)
        if args.command == "stats":
            return _cmd_stats(args)
        return _cmd_export(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"gsrpde: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _INVALID_ERRORS as exc:
        print(f"gsrpde: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main(argv: list[str] | None = None) -> int:
    """CLI entry point.

    Args:
        argv: Optional argument override primarily used for testing.

    Returns:
        Process exit code (0 success, 1 invalid input, 2 numerical failure).
    """

    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
