"""Penalized weighted least squares through a sparse symmetric block system.

One call solves

    min_{beta, f}  || W^{1/2} (z - X beta - Psi f) ||^2 + lambda f^T P f,
    P = R1 R0^{-1} R1,

without forming ``P``. With ``X~ = W^{1/2} X = Qx R`` the field coefficients come from
the symmetric system

    [ -Psi~^T Psi~   lambda R1   Psi~^T Qx ] [f]   [ -Psi~^T Q~ z~ ]
    [  lambda R1     lambda R0   0         ] [h] = [  0            ]
    [  Qx^T Psi~     0           -I_q      ] [g]   [  0            ]

whose Schur complement over ``g`` is the mixed system with ``Psi~^T Q~ Psi~``.
``h`` satisfies ``R0 h = -R1 f`` and ``beta`` is recovered from the projection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import splu

from .errors import RankDeficientError, SingularSystemError
from .fem import FemSystem

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
TRACE_CHUNK = 256

Ordering = Literal["COLAMD", "MMD_AT_PLUS_A", "MMD_ATA", "NATURAL"]


@dataclass(frozen=True, eq=False)
class PlsSolution:
    """Result of one penalized least-squares solve."""

    beta: np.ndarray | None
    f_coeffs: np.ndarray
    h_coeffs: np.ndarray
    lam: float
    hat_trace: float | None
    fitted_fn: np.ndarray
    roughness: float

    @property
    def q(self) -> int:
        return 0 if self.beta is None else int(self.beta.size)

    def linear_predictor(self, X: np.ndarray | None) -> np.ndarray:
        """``X beta + Psi f`` on the observation scale of the solve."""

        if X is None or self.beta is None:
            return self.fitted_fn.copy()
        return np.asarray(X, dtype=float) @ self.beta + self.fitted_fn


def _check_inputs(
    fem: FemSystem, X: np.ndarray | None, z: np.ndarray, w: np.ndarray, lam: float
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    if not lam > 0.0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be a positive finite number, got {lam!r}")
    n = fem.n_obs
    z = np.asarray(z, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if z.size != n or w.size != n:
        raise ValueError(f"expected {n} pseudo-data and weights, got {z.size} and {w.size}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0.0):
        raise ValueError("weights must be positive and finite")
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != n:
            raise ValueError(f"design matrix has {X.shape[0]} rows for {n} observations")
        if X.shape[1] == 0:
            X = None
    return X, z, w


class _BorderedSystem:
    """Factorized block matrix for fixed ``(fem, X, W, lambda)``."""

    def __init__(
        self,
        fem: FemSystem,
        X: np.ndarray | None,
        w: np.ndarray,
        lam: float,
        ordering: Ordering = "COLAMD",
    ) -> None:
        self.fem = fem
        self.lam = float(lam)
        self.sqrt_w = np.sqrt(w)
        self.psi_w = sparse.diags(self.sqrt_w) @ fem.psi
        k = fem.n_basis

        if X is None:
            self.q = 0
            self.qx = None
            self.rx = None
            self.border = None
        else:
            x_w = self.sqrt_w[:, None] * X
            n, q = x_w.shape
            if q > n:
                raise RankDeficientError(f"design matrix has {q} columns but only {n} observations")
            singular = linalg.svdvals(x_w)
            if singular.size == 0 or singular.min() <= RANK_TOL * singular.max():
                raise RankDeficientError(
                    f"weighted design matrix is rank deficient "
                    f"(smallest/largest singular value {singular.min():.3g}/{singular.max():.3g})"
                )
            self.q = q
            self.qx, self.rx = linalg.qr(x_w, mode="economic")
            # Constant fields are unpenalized: X must not span their image Psi 1
            # (ones for point data, region areas for areal data).
            null = self.sqrt_w * np.asarray(fem.psi @ np.ones(k)).ravel()
            leftover = null - self.qx @ (self.qx.T @ null)
            if np.linalg.norm(leftover) <= 1e-8 * np.linalg.norm(null):
                raise RankDeficientError(
                    "design matrix spans the constant field seen through the observations "
                    "(Psi 1), which the field already absorbs; drop that column"
                )
            self.border = np.asarray((self.psi_w.T @ self.qx)).T  # Qx^T Psi~, q x K

        gram = (self.psi_w.T @ self.psi_w).tocsc()
        blocks: list[list[sparse.spmatrix | None]] = [
            [-gram, self.lam * fem.r1],
            [self.lam * fem.r1, self.lam * fem.r0],
        ]
        if self.q:
            border = sparse.csr_matrix(self.border)
            blocks[0].append(border.T)
            blocks[1].append(None)
            blocks.append([border, None, -sparse.identity(self.q, format="csr")])
        self.matrix = sparse.bmat(blocks, format="csc")
        self.size = 2 * k + self.q
        try:
            self.lu = splu(self.matrix, permc_spec=ordering)
        except RuntimeError as exc:
            raise SingularSystemError(f"block system is singular at lambda={self.lam:g}: {exc}") from exc
        logger.debug(
            "Factorized block system: size=%d, nnz=%d, ordering=%s", self.size, self.matrix.nnz, ordering
        )

    def project(self, v: np.ndarray) -> np.ndarray:
        """``Q~ v`` for weighted vectors ``v`` (columns when 2-D)."""

        if self.qx is None:
            return v
        return v - self.qx @ (self.qx.T @ v)

    def solve_field(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``(Psi~^T Q~ Psi~ + lambda P)^{-1} rhs`` for K-vectors (or columns)."""

        rhs = np.asarray(rhs, dtype=float)
        k = self.fem.n_basis
        full_shape = (self.size,) + rhs.shape[1:]
        full = np.zeros(full_shape)
        full[:k] = -rhs
        sol = self.lu.solve(full)
        if not np.all(np.isfinite(sol)):
            raise SingularSystemError(f"block system produced non-finite values at lambda={self.lam:g}")
        return sol[:k]

    def solve(self, z: np.ndarray) -> PlsSolution:
        k = self.fem.n_basis
        z_w = self.sqrt_w * z
        rhs = np.zeros(self.size)
        rhs[:k] = -(self.psi_w.T @ self.project(z_w))
        sol = self.lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SingularSystemError(f"block system produced non-finite values at lambda={self.lam:g}")
        f = sol[:k]
        h = sol[k : 2 * k]
        beta = None
        if self.q:
            beta = linalg.solve_triangular(self.rx, self.qx.T @ (z_w - self.psi_w @ f))
        roughness = float(h @ (self.fem.r0 @ h))
        return PlsSolution(
            beta=beta,
            f_coeffs=f,
            h_coeffs=h,
            lam=self.lam,
            hat_trace=None,
            fitted_fn=np.asarray(self.fem.psi @ f),
            roughness=max(roughness, 0.0),
        )

    def trace(self) -> float:
        """Exact ``tr(M) = q + tr(A Psi~^T Q~ Psi~)`` with ``A`` the penalized inverse."""

        n, k = self.psi_w.shape
        total = float(self.q)
        if n <= k:
            # Columns of Psi~^T Q~ give tr(A C^T C) = sum_i c_i^T A c_i.
            for start in range(0, n, TRACE_CHUNK):
                stop = min(start + TRACE_CHUNK, n)
                unit = np.zeros((n, stop - start))
                unit[np.arange(start, stop), np.arange(stop - start)] = 1.0
                cols = np.asarray(self.psi_w.T @ self.project(unit))
                total += float(np.sum(cols * self.solve_field(cols)))
        else:
            dense_psi = self.psi_w.toarray()
            gram = dense_psi.T @ self.project(dense_psi)
            for start in range(0, k, TRACE_CHUNK):
                stop = min(start + TRACE_CHUNK, k)
                solved = self.solve_field(gram[:, start:stop])
                total += float(np.trace(solved[start:stop, :]))
        return total


def solve_pls(
    fem: FemSystem,
    X: np.ndarray | None,
    z: np.ndarray,
    w: np.ndarray,
    lam: float,
    *,
    compute_trace: bool = True,
    ordering: Ordering = "COLAMD",
) -> PlsSolution:
    """Solve the weighted penalized least-squares problem for ``(beta, f)``.

    Args:
        fem: Assembled finite-element system.
        X: ``n x q`` covariate matrix or ``None``.
        z: Pseudo-data.
        w: Positive working weights (already floored).
        lam: Smoothing parameter.
        compute_trace: Also compute ``tr(M)`` against the same factorization.
        ordering: SuperLU column ordering.

    Raises:
        RankDeficientError: If ``W^{1/2} X`` is not of full column rank.
        SingularSystemError: If the block system cannot be factorized.
    """

    X, z, w = _check_inputs(fem, X, z, w, lam)
    system = _BorderedSystem(fem, X, w, lam, ordering)
    solution = system.solve(z)
    if compute_trace:
        solution = _with_trace(solution, system.trace())
    return solution


def hat_trace(
    fem: FemSystem,
    X: np.ndarray | None,
    w: np.ndarray,
    lam: float,
    *,
    ordering: Ordering = "COLAMD",
) -> float:
    """``tr(M)`` for the smoother at weights ``w`` and smoothing parameter ``lam``."""

    X, _, w = _check_inputs(fem, X, np.zeros(fem.n_obs), w, lam)
    return _BorderedSystem(fem, X, w, lam, ordering).trace()


def _with_trace(solution: PlsSolution, trace: float) -> PlsSolution:
    return PlsSolution(
        beta=solution.beta,
        f_coeffs=solution.f_coeffs,
        h_coeffs=solution.h_coeffs,
        lam=solution.lam,
        hat_trace=trace,
        fitted_fn=solution.fitted_fn,
        roughness=solution.roughness,
    )


def dense_pls_oracle(
    fem: FemSystem,
    X: np.ndarray | None,
    z: np.ndarray,
    w: np.ndarray,
    lam: float,
) -> PlsSolution:
    """Closed-form dense solution ``(Psi~^T Q~ Psi~ + lambda P)^{-1} Psi~^T Q~ z~``.

    Forms ``P`` explicitly, so it is limited to desk-scale meshes.
    """

    X, z, w = _check_inputs(fem, X, z, w, lam)
    sqrt_w = np.sqrt(w)
    psi_w = sqrt_w[:, None] * fem.psi.toarray()
    z_w = sqrt_w * z
    n = z.size
    projector = np.eye(n)
    if X is not None:
        x_w = sqrt_w[:, None] * X
        projector -= x_w @ np.linalg.solve(x_w.T @ x_w, x_w.T)
    penalty = fem.dense_penalty()
    lhs = psi_w.T @ projector @ psi_w + lam * penalty
    f = np.linalg.solve(lhs, psi_w.T @ projector @ z_w)
    trace = float(np.trace(np.linalg.solve(lhs, psi_w.T @ projector @ psi_w)))
    beta = None
    if X is not None:
        x_w = sqrt_w[:, None] * X
        beta = np.linalg.solve(x_w.T @ x_w, x_w.T @ (z_w - psi_w @ f))
        trace += X.shape[1]
    r1 = fem.r1.toarray()
    h = -np.linalg.solve(fem.r0.toarray(), r1 @ f)
    return PlsSolution(
        beta=beta,
        f_coeffs=f,
        h_coeffs=h,
        lam=float(lam),
        hat_trace=trace,
        fitted_fn=fem.psi.toarray() @ f,
        roughness=float(f @ penalty @ f),
    )


__all__ = [
    "Ordering",
    "PlsSolution",
    "RANK_TOL",
    "dense_pls_oracle",
    "hat_trace",
    "solve_pls",
]
