"""Sampling mean and covariance of the gaussian field estimator at probe points."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import StatisticsError
from .fem import FemSystem, PointObservations, assemble_psi
from .mesh import TriangularMesh
from .solver import solve_pls

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FieldStats:
    """Moments of ``f_hat`` at ``points``; covariance in units of the supplied ``sigma2``."""

    points: np.ndarray
    mean: np.ndarray | None
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()


def _projector(X: np.ndarray | None, n: int) -> np.ndarray:
    if X is None:
        return np.eye(n)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise StatisticsError(f"design matrix has {X.shape[0]} rows for {n} observations")
    return np.eye(n) - X @ np.linalg.solve(X.T @ X, X.T)


def field_stats(
    mesh: TriangularMesh,
    fem: FemSystem,
    lam: float,
    sigma2: float,
    points: object,
    *,
    truth: np.ndarray | None = None,
    X: np.ndarray | None = None,
) -> FieldStats:
    """Covariance ``sigma2 psi(p1)^T A Psi^T Psi A psi(p2)`` with ``A = (Psi^T Psi + lambda P)^{-1}``.

    Args:
        mesh: Mesh the system was assembled on.
        fem: Assembled system; ``K`` must not exceed the dense limit.
        lam: Smoothing parameter.
        sigma2: Noise variance.
        points: Probe locations inside the mesh.
        truth: True field evaluated through the observation operator, used for the mean.
        X: When given, ``Psi^T Psi`` is replaced by ``Psi^T Q Psi`` (covariate-adjusted).

    Raises:
        StatisticsError: If ``K`` is too large for dense statistics or inputs are invalid.
        ObservationError: If a probe point lies outside the mesh.
    """

    if not lam > 0.0:
        raise StatisticsError(f"lambda must be positive, got {lam!r}")
    if not sigma2 > 0.0:
        raise StatisticsError(f"sigma2 must be positive, got {sigma2!r}")
    if fem.mesh_ref != mesh.checksum:
        raise StatisticsError("FEM system was assembled on a different mesh")
    probes = PointObservations(points)
    basis = assemble_psi(mesh, probes).toarray()
    penalty = fem.dense_penalty()
    psi = fem.psi.toarray()
    projector = _projector(X, fem.n_obs)
    gram = psi.T @ projector @ psi
    inverse = np.linalg.inv(gram + lam * penalty)
    inverse = 0.5 * (inverse + inverse.T)
    sandwich = inverse @ gram @ inverse
    covariance = sigma2 * basis @ sandwich @ basis.T
    covariance = 0.5 * (covariance + covariance.T)

    mean = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float).ravel()
        if truth.size != fem.n_obs:
            raise StatisticsError(f"truth has {truth.size} values for {fem.n_obs} observations")
        mean = basis @ (inverse @ (psi.T @ (projector @ truth)))
    logger.debug("Field statistics at %d probe points (K=%d)", basis.shape[0], fem.n_basis)
    return FieldStats(points=probes.points, mean=mean, covariance=covariance)


def empirical_field_covariance(
    mesh: TriangularMesh,
    fem: FemSystem,
    lam: float,
    sigma2: float,
    points: object,
    truth: np.ndarray,
    reps: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean and covariance of ``f_hat(points)`` over ``reps`` gaussian datasets."""

    if reps < 2:
        raise StatisticsError("at least two replicates are needed for a covariance")
    basis = assemble_psi(mesh, PointObservations(points))
    truth = np.asarray(truth, dtype=float).ravel()
    ones = np.ones(fem.n_obs)
    samples = np.empty((reps, basis.shape[0]))
    for r in range(reps):
        y = truth + np.sqrt(sigma2) * rng.standard_normal(fem.n_obs)
        solution = solve_pls(fem, None, y, ones, lam, compute_trace=False)
        samples[r] = basis @ solution.f_coeffs
    return samples.mean(axis=0), np.cov(samples, rowvar=False, ddof=1)


__all__ = ["FieldStats", "empirical_field_covariance", "field_stats"]
