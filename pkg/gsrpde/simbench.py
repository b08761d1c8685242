"""Horseshoe benchmark: geometry, closed-form test fields, data generators and studies."""

from __future__ import annotations

import importlib.resources as importlib_resources
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd

from .config_models import (
    ArealStudySettings,
    FitOptions,
    GeostatStudySettings,
    HorseshoeSettings,
    StudyCase,
)
from .errors import ObservationError
from .fem import (
    FemSystem,
    ObservationSet,
    PointObservations,
    RegionObservations,
    assemble_psi,
    integrate_function,
)
from .mesh import TriangularMesh
from .pirls import FitResult, fit
from .selection import default_lambda_grid, gcv_scan

logger = logging.getLogger(__name__)

FieldVariant = Literal["geostat", "areal"]

PROBE_STEP_X = 0.02
PROBE_STEP_Y = 0.01
MAX_LOG_MEAN = 30.0


class HorseshoeRegion(StrEnum):
    A = "A"
    B = "B"
    C = "C"
    UPPER_ARM = "upper-arm"
    LOWER_ARM = "lower-arm"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class HorseshoeSpec:
    """C-shaped domain: two arms of length 3, a half-annulus bend and half-disk caps."""

    r: float = 0.5
    r0: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.r0 < self.r:
            raise ValueError(f"horseshoe requires 0 < r0 < r, got r={self.r}, r0={self.r0}")

    @property
    def q(self) -> float:
        return math.pi * self.r / 2.0

    @classmethod
    def from_settings(cls, settings: HorseshoeSettings) -> "HorseshoeSpec":
        return cls(r=settings.r, r0=settings.r0)


def shipped_path(name: str) -> Path:
    """Path of a data file shipped in ``gsrpde_data`` (``horseshoe.mesh``, ...)."""

    resource = importlib_resources.files("gsrpde_data") / name
    path = Path(str(resource))
    if not path.is_file():
        raise FileNotFoundError(f"No shipped data file named '{name}'")
    return path


def classify(spec: HorseshoeSpec, points: object) -> np.ndarray:
    """Vectorized :func:`horseshoe_contains`; returns an object array of labels."""

    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    r, r0 = spec.r, spec.r0
    outer = 2 * r - r0
    cap_radius2 = (r - r0) ** 2
    labels = np.full(pts.shape[0], HorseshoeRegion.OUTSIDE, dtype=object)

    arm = (x >= 0) & (x <= 3) & (np.abs(y) >= r0) & (np.abs(y) <= outer)
    labels[arm & (y > 0)] = HorseshoeRegion.UPPER_ARM
    labels[arm & (y < 0)] = HorseshoeRegion.LOWER_ARM
    labels[(x > 3) & ((x - 3) ** 2 + (y - r) ** 2 <= cap_radius2)] = HorseshoeRegion.A
    labels[(x > 3) & ((x - 3) ** 2 + (y + r) ** 2 <= cap_radius2)] = HorseshoeRegion.C
    rho2 = x**2 + y**2
    labels[(x < 0) & (rho2 >= r0**2) & (rho2 <= outer**2)] = HorseshoeRegion.B
    return labels


def horseshoe_contains(spec: HorseshoeSpec, p: Sequence[float]) -> HorseshoeRegion:
    """Label of ``p``: a cap (A, C), the bend (B), an arm, or ``outside``."""

    return classify(spec, np.asarray(p, dtype=float).reshape(1, 2))[0]


def _along_across(spec: HorseshoeSpec, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Arc length along the centre line (zero at the bend apex) and signed offset from it.
    x, y = pts[:, 0], pts[:, 1]
    q, r = spec.q, spec.r
    along = np.empty(x.size)
    across = np.empty(x.size)
    upper = (x >= 0) & (y > 0)
    lower = (x >= 0) & (y <= 0)
    bend = x < 0
    along[upper] = q + x[upper]
    across[upper] = y[upper] - r
    along[lower] = -q - x[lower]
    across[lower] = -r - y[lower]
    xb, yb = x[bend], y[bend]
    along[bend] = -np.arctan(yb / xb) * r
    across[bend] = np.hypot(xb, yb) - r
    return along, across


def field_values(spec: HorseshoeSpec, variant: FieldVariant, points: object) -> np.ndarray:
    """Test field at ``points`` without a domain check (quadrature and grids)."""

    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    along, across = _along_across(spec, pts)
    base = along + np.square(across)
    if variant == "areal":
        return base
    if variant == "geostat":
        return -(base + 10.0) / 8.0
    raise ValueError(f"unknown field variant '{variant}'")


def test_field(spec: HorseshoeSpec, variant: FieldVariant, p: Sequence[float]) -> float:
    """Closed-form test field at a point of the horseshoe.

    Raises:
        ValueError: If ``p`` lies outside the horseshoe.
    """

    point = np.asarray(p, dtype=float).reshape(1, 2)
    if horseshoe_contains(spec, point[0]) is HorseshoeRegion.OUTSIDE:
        raise ValueError(f"point ({point[0, 0]:g}, {point[0, 1]:g}) lies outside the horseshoe")
    return float(field_values(spec, variant, point)[0])


test_field.__test__ = False  # keep pytest from collecting it


@dataclass(frozen=True, eq=False)
class SimDataset:
    """One synthetic dataset and the truth it was drawn from."""

    observations: ObservationSet
    true_beta: np.ndarray
    true_field_fn: Callable[[np.ndarray], np.ndarray]
    truth: np.ndarray
    mu: np.ndarray
    phi: float = 1.0

    @property
    def X(self) -> np.ndarray:
        assert self.observations.X is not None
        return self.observations.X


def sample_locations(
    mesh: TriangularMesh, spec: HorseshoeSpec, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform rejection sample of ``n`` points inside both the horseshoe and the mesh."""

    if n < 1:
        raise ValueError("n must be >= 1")
    xmin, ymin, xmax, ymax = mesh.bounding_box
    accepted: list[np.ndarray] = []
    count = 0
    while count < n:
        batch = rng.uniform((xmin, ymin), (xmax, ymax), size=(max(2 * (n - count), 16), 2))
        keep = classify(spec, batch) != HorseshoeRegion.OUTSIDE
        batch = batch[keep]
        tri, _ = mesh.locate_many(batch)
        batch = batch[tri >= 0]
        accepted.append(batch)
        count += batch.shape[0]
    return np.concatenate(accepted)[:n]


def generate_geostat_gamma(
    mesh: TriangularMesh,
    spec: HorseshoeSpec,
    n: int,
    seed: int | np.random.SeedSequence,
    phi: float = 0.1,
    beta: Sequence[float] = (-0.4, 0.3),
    *,
    locations: np.ndarray | None = None,
) -> SimDataset:
    """Gamma responses at uniform locations with covariates ``1 + Beta(1.5, 2)``, ``1 + Beta(3, 2)``.

    The mean is ``mu = -1 / (x^T beta + f(p))`` and the responses have variance ``phi mu^2``.

    Raises:
        ObservationError: If some mean is not positive.
    """

    if phi <= 0:
        raise ValueError("phi must be positive")
    rng = np.random.default_rng(seed)
    points = sample_locations(mesh, spec, n, rng) if locations is None else np.asarray(locations, dtype=float)
    if points.shape != (n, 2):
        raise ValueError(f"expected {n} locations, got array of shape {points.shape}")
    X = np.column_stack([1.0 + rng.beta(1.5, 2.0, size=n), 1.0 + rng.beta(3.0, 2.0, size=n)])
    true_beta = np.asarray(beta, dtype=float)
    truth = field_values(spec, "geostat", points)
    theta = X @ true_beta + truth
    if np.any(theta >= 0):
        i = int(np.flatnonzero(theta >= 0)[0])
        raise ObservationError(f"non-positive gamma mean at observation {i} (canonical value {theta[i]:g})")
    mu = -1.0 / theta
    y = rng.gamma(shape=1.0 / phi, scale=mu * phi)
    observations = ObservationSet(y, PointObservations(points), X, ("x1", "x2"))
    return SimDataset(
        observations=observations,
        true_beta=true_beta,
        true_field_fn=lambda p: field_values(spec, "geostat", p),
        truth=truth,
        mu=mu,
        phi=phi,
    )


def region_truth(
    mesh: TriangularMesh, spec: HorseshoeSpec, regions: Sequence[np.ndarray]
) -> np.ndarray:
    """Integral of the areal test field over each region."""

    fn = lambda p: field_values(spec, "areal", p)  # noqa: E731
    return np.array([integrate_function(mesh, fn, region) for region in regions])


def generate_areal_poisson(
    mesh: TriangularMesh,
    regions: Sequence[np.ndarray],
    seed: int | np.random.SeedSequence,
    beta: float = 5.0,
    spec: HorseshoeSpec | None = None,
    *,
    truth: np.ndarray | None = None,
) -> SimDataset:
    """Poisson counts with ``log mu_i = beta x_i + integral of f over D_i`` and ``x_i ~ Beta(2, 2)``.

    Raises:
        ObservationError: If the regions are invalid or some ``log mu_i`` exceeds the guard.
    """

    spec = spec or HorseshoeSpec()
    operator = RegionObservations(tuple(regions))
    if truth is None:
        truth = region_truth(mesh, spec, operator.regions)
    rng = np.random.default_rng(seed)
    n = len(operator)
    x = rng.beta(2.0, 2.0, size=n)
    log_mu = beta * x + truth
    if np.any(log_mu > MAX_LOG_MEAN):
        raise ObservationError(f"log mean {float(log_mu.max()):g} exceeds {MAX_LOG_MEAN:g}")
    mu = np.exp(log_mu)
    y = rng.poisson(mu).astype(float)
    observations = ObservationSet(y, operator, x[:, None], ("x1",))
    return SimDataset(
        observations=observations,
        true_beta=np.array([beta], dtype=float),
        true_field_fn=lambda p: field_values(spec, "areal", p),
        truth=np.asarray(truth, dtype=float),
        mu=mu,
        phi=1.0,
    )


def probe_grid(
    mesh: TriangularMesh,
    spec: HorseshoeSpec,
    dx: float = PROBE_STEP_X,
    dy: float = PROBE_STEP_Y,
) -> np.ndarray:
    """Regular grid over the mesh bounding box, restricted to the horseshoe and the mesh."""

    xmin, ymin, xmax, ymax = mesh.bounding_box
    xs = np.arange(xmin, xmax + 0.5 * dx, dx)
    ys = np.arange(ymin, ymax + 0.5 * dy, dy)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    points = points[classify(spec, points) != HorseshoeRegion.OUTSIDE]
    tri, _ = mesh.locate_many(points)
    return points[tri >= 0]


@dataclass(frozen=True, eq=False)
class RmseTables:
    field_rmse: np.ndarray
    beta_summary: pd.DataFrame


def beta_summary(
    beta_hats: np.ndarray, true_beta: Sequence[float], names: Sequence[str] | None = None
) -> pd.DataFrame:
    """Mean, standard deviation (ddof=1, 0 for one replicate) and RMSE per coefficient."""

    est = np.atleast_2d(np.asarray(beta_hats, dtype=float))
    truth = np.asarray(true_beta, dtype=float).ravel()
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(truth.size)]
    sd = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(truth.size)
    return pd.DataFrame(
        {
            "name": names,
            "true": truth,
            "mean": est.mean(axis=0),
            "sd": sd,
            "rmse": np.sqrt(np.mean(np.square(est - truth), axis=0)),
        }
    )


def rmse_metrics(
    field_estimates: np.ndarray,
    truth: np.ndarray,
    beta_hats: np.ndarray | None = None,
    true_beta: Sequence[float] | None = None,
    names: Sequence[str] | None = None,
) -> RmseTables:
    """Replicate RMSE of field values (at probes or over regions) and beta summaries.

    Args:
        field_estimates: ``(M, m)`` estimated values, one row per replicate.
        truth: ``m`` true values.
    """

    est = np.atleast_2d(np.asarray(field_estimates, dtype=float))
    if est.shape[0] < 1:
        raise ValueError("at least one replicate is required")
    rmse = np.sqrt(np.mean(np.square(est - np.asarray(truth, dtype=float)[None, :]), axis=0))
    summary = (
        beta_summary(beta_hats, true_beta, names)
        if beta_hats is not None and true_beta is not None
        else pd.DataFrame(columns=["name", "true", "mean", "sd", "rmse"])
    )
    return RmseTables(field_rmse=rmse, beta_summary=summary)


@dataclass(frozen=True, eq=False)
class StudyResult:
    """Per-replicate table, field RMSE table and beta summary of one study."""

    case: StudyCase
    replicates: pd.DataFrame
    rmse: pd.DataFrame
    beta_summary: pd.DataFrame
    extras: dict[str, float] = field(default_factory=dict)


def replicate_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for replicate ``index`` of a study seeded with ``seed``."""

    return np.random.SeedSequence([seed, index])


def _replicate_row(index: int, result: FitResult) -> dict[str, object]:
    row: dict[str, object] = {"replicate": index}
    for name, value in zip(result.covariate_names, result.beta.tolist()):
        row[f"beta_hat_{name}"] = value
    row.update(
        {
            "lambda": result.lam,
            "edf": result.hat_trace,
            "gcv": result.gcv,
            "converged": result.converged,
            "iters": result.iterations,
        }
    )
    return row


def _run_replicates(
    worker: Callable[[int], FitResult], reps: int, threads: int
) -> list[FitResult]:
    if threads > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, range(reps)))
    return [worker(index) for index in range(reps)]


def run_geostat_study(
    mesh: TriangularMesh,
    spec: HorseshoeSpec | None = None,
    settings: GeostatStudySettings | None = None,
    seed: int = 1,
    *,
    lam_grid: Sequence[float] | None = None,
    options: FitOptions | None = None,
    threads: int = 1,
) -> StudyResult:
    """Gamma study: fixed locations, per-replicate covariates and responses, GCV per replicate."""

    spec = spec or HorseshoeSpec()
    settings = settings or GeostatStudySettings()
    grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, dtype=float)
    locations = sample_locations(mesh, spec, settings.n, np.random.default_rng(seed))
    fem = FemSystem.build(mesh, PointObservations(locations))
    probes = probe_grid(mesh, spec)
    probe_basis = assemble_psi(mesh, PointObservations(probes))
    probe_truth = field_values(spec, "geostat", probes)

    def worker(index: int) -> FitResult:
        data = generate_geostat_gamma(
            mesh, spec, settings.n, replicate_seed(seed, index), settings.phi, settings.beta, locations=locations
        )
        scan = gcv_scan("gamma", data.observations, fem, None, grid, 1.0, options)
        logger.info("geostat replicate %d: lambda=%g", index, scan.best_lambda)
        return scan.best_fit

    fits = _run_replicates(worker, settings.reps, threads)
    estimates = np.vstack([probe_basis @ result.f_coeffs for result in fits])
    tables = rmse_metrics(
        estimates, probe_truth, np.vstack([result.beta for result in fits]), settings.beta, ("x1", "x2")
    )
    rmse = pd.DataFrame({"x": probes[:, 0], "y": probes[:, 1], "rmse": tables.field_rmse})
    return StudyResult(
        case="geostat-gamma",
        replicates=pd.DataFrame([_replicate_row(i, r) for i, r in enumerate(fits)]),
        rmse=rmse,
        beta_summary=tables.beta_summary,
        extras={"rmse_median": float(np.median(tables.field_rmse))},
    )


def run_areal_study(
    mesh: TriangularMesh,
    regions: Sequence[np.ndarray],
    spec: HorseshoeSpec | None = None,
    settings: ArealStudySettings | None = None,
    seed: int = 1,
    *,
    lam_grid: Sequence[float] | None = None,
    options: FitOptions | None = None,
    threads: int = 1,
) -> StudyResult:
    """Poisson study on a region partition; lambda fixed by one GCV scan on replicate 0."""

    spec = spec or HorseshoeSpec()
    settings = settings or ArealStudySettings()
    grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, dtype=float)
    operator = RegionObservations(tuple(regions))
    fem = FemSystem.build(mesh, operator)
    truth = region_truth(mesh, spec, operator.regions)

    def dataset(index: int) -> SimDataset:
        return generate_areal_poisson(
            mesh, operator.regions, replicate_seed(seed, index), settings.beta, spec, truth=truth
        )

    scan = gcv_scan("poisson", dataset(0).observations, fem, None, grid, 1.0, options, threads=threads)
    lam = scan.best_lambda
    logger.info("areal study: lambda fixed at %g by GCV on replicate 0", lam)

    def worker(index: int) -> FitResult:
        if index == 0:
            return scan.best_fit
        return fit("poisson", dataset(index).observations, fem, None, lam, options)

    fits = _run_replicates(worker, settings.reps, threads)
    estimates = np.vstack([np.asarray(fem.psi @ result.f_coeffs) for result in fits])
    tables = rmse_metrics(
        estimates, truth, np.vstack([result.beta for result in fits]), [settings.beta], ("x1",)
    )
    rmse = pd.DataFrame({"region": np.arange(truth.size), "rmse": tables.field_rmse})
    return StudyResult(
        case="areal-poisson",
        replicates=pd.DataFrame([_replicate_row(i, r) for i, r in enumerate(fits)]),
        rmse=rmse,
        beta_summary=tables.beta_summary,
        extras={"lambda": float(lam)},
    )


__all__ = [
    "FieldVariant",
    "HorseshoeRegion",
    "HorseshoeSpec",
    "RmseTables",
    "SimDataset",
    "StudyResult",
    "beta_summary",
    "classify",
    "field_values",
    "generate_areal_poisson",
    "generate_geostat_gamma",
    "horseshoe_contains",
    "probe_grid",
    "region_truth",
    "replicate_seed",
    "rmse_metrics",
    "run_areal_study",
    "run_geostat_study",
    "sample_locations",
    "shipped_path",
    "test_field",
]
