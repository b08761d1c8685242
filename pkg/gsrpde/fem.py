"""Linear finite-element matrices, observation operators and field evaluation."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ObservationError, StatisticsError
from .mesh import TriangularMesh

logger = logging.getLogger(__name__)

DENSE_PENALTY_LIMIT = 2000

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
# Interior 3-point rule, exact for quadratics.
_QUADRATURE_BARY = np.array(
    [[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]
)


@dataclass(frozen=True, eq=False)
class PointObservations:
    """Pointwise evaluation at ``n`` locations inside the mesh."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True, eq=False)
class RegionObservations:
    """Integrals over ``n`` disjoint unions of mesh triangles."""

    regions: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        regions = tuple(np.asarray(r, dtype=np.int64).ravel() for r in self.regions)
        seen: dict[int, int] = {}
        for index, region in enumerate(regions):
            if region.size == 0:
                raise ObservationError(f"region {index} is empty")
            for t in np.unique(region).tolist():
                if t in seen:
                    raise ObservationError(
                        f"regions {seen[t]} and {index} overlap on triangle {t}"
                    )
                seen[t] = index
        object.__setattr__(self, "regions", regions)

    def __len__(self) -> int:
        return len(self.regions)


ObservationOperator = PointObservations | RegionObservations


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Responses, optional covariates and the operator linking them to the field."""

    y: np.ndarray
    operator: ObservationOperator
    X: np.ndarray | None = None
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float).ravel()
        if y.size == 0:
            raise ObservationError("no observations")
        if not np.all(np.isfinite(y)):
            raise ObservationError(f"observation {int(np.flatnonzero(~np.isfinite(y))[0])} is not finite")
        if len(self.operator) != y.size:
            raise ObservationError(
                f"{y.size} responses but the observation operator describes {len(self.operator)}"
            )
        X = self.X
        names = tuple(self.covariate_names)
        if X is not None:
            X = np.array(X, dtype=float)
            if X.ndim == 1:
                X = X[:, None]
            if X.shape[0] != y.size:
                raise ObservationError(f"design matrix has {X.shape[0]} rows for {y.size} responses")
            if X.shape[1] == 0:
                X = None
        q = 0 if X is None else X.shape[1]
        if not names:
            names = tuple(f"x{k + 1}" for k in range(q))
        if len(names) != q:
            raise ObservationError(f"{len(names)} covariate names for {q} columns")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def q(self) -> int:
        return 0 if self.X is None else int(self.X.shape[1])


def _symmetrize(matrix: sparse.spmatrix) -> sparse.csc_matrix:
    return (0.5 * (matrix + matrix.T)).tocsc()


def _scatter(mesh: TriangularMesh, local: np.ndarray) -> sparse.csc_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    k = mesh.n_nodes
    return _symmetrize(sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(k, k)))


def assemble_mass(mesh: TriangularMesh) -> sparse.csc_matrix:
    """Mass matrix ``R0[i, j] = integral of psi_i psi_j`` with the exact P1 rule."""

    local = mesh.areas[:, None, None] * _LOCAL_MASS[None, :, :]
    return _scatter(mesh, local)


def basis_gradients(mesh: TriangularMesh) -> np.ndarray:
    """Constant gradients of the three local hat functions, shape ``(T, 3, 2)``."""

    p = mesh.nodes[mesh.triangles]
    twice_area = 2.0 * mesh.areas
    grads = np.empty((mesh.n_triangles, 3, 2))
    for a in range(3):
        nxt, prv = p[:, (a + 1) % 3], p[:, (a + 2) % 3]
        grads[:, a, 0] = (nxt[:, 1] - prv[:, 1]) / twice_area
        grads[:, a, 1] = (prv[:, 0] - nxt[:, 0]) / twice_area
    return grads


def assemble_stiffness(mesh: TriangularMesh) -> sparse.csc_matrix:
    """Stiffness matrix ``R1[i, j] = integral of grad psi_i . grad psi_j``."""

    grads = basis_gradients(mesh)
    local = mesh.areas[:, None, None] * np.einsum("tak,tbk->tab", grads, grads)
    return _scatter(mesh, 0.5 * (local + local.transpose(0, 2, 1)))


def assemble_psi(mesh: TriangularMesh, op: ObservationOperator) -> sparse.csr_matrix:
    """Observation matrix: ``psi_j`` evaluated at points, or integrated over regions.

    Raises:
        ObservationError: If a point lies outside the mesh or a region references an
            unknown triangle.
    """

    k = mesh.n_nodes
    if isinstance(op, PointObservations):
        tri, bary = mesh.locate_many(op.points)
        outside = np.flatnonzero(tri < 0)
        if outside.size:
            i = int(outside[0])
            raise ObservationError(
                f"observation {i} at ({op.points[i, 0]:.6g}, {op.points[i, 1]:.6g}) lies outside the mesh"
            )
        n = len(op)
        rows = np.repeat(np.arange(n), 3)
        cols = mesh.triangles[tri].ravel()
        return sparse.coo_matrix((bary.ravel(), (rows, cols)), shape=(n, k)).tocsr()

    if isinstance(op, RegionObservations):
        rows_list: list[np.ndarray] = []
        tris_list: list[np.ndarray] = []
        for index, region in enumerate(op.regions):
            if region.min() < 0 or region.max() >= mesh.n_triangles:
                raise ObservationError(f"region {index} references a triangle outside the mesh")
            rows_list.append(np.full(region.size, index))
            tris_list.append(region)
        rows_t = np.concatenate(rows_list)
        tris = np.concatenate(tris_list)
        rows = np.repeat(rows_t, 3)
        cols = mesh.triangles[tris].ravel()
        data = np.repeat(mesh.areas[tris] / 3.0, 3)
        return sparse.coo_matrix((data, (rows, cols)), shape=(len(op), k)).tocsr()

    raise TypeError(f"unsupported observation operator {type(op).__name__}")


def evaluate_field(mesh: TriangularMesh, coeffs: object, points: object) -> np.ndarray:
    """Barycentric interpolation of nodal ``coeffs`` at ``points``; NaN outside the mesh."""

    values = np.asarray(coeffs, dtype=float).ravel()
    if values.size != mesh.n_nodes:
        raise ValueError(f"expected {mesh.n_nodes} coefficients, got {values.size}")
    tri, bary = mesh.locate_many(points)
    out = np.full(tri.size, np.nan)
    inside = tri >= 0
    out[inside] = np.einsum("ij,ij->i", bary[inside], values[mesh.triangles[tri[inside]]])
    return out


def integrate_function(
    mesh: TriangularMesh,
    fn: Callable[[np.ndarray], np.ndarray],
    triangles: Sequence[int] | np.ndarray | None = None,
) -> float:
    """Integrate a vectorized closed-form field over a union of triangles.

    Uses three interior quadrature points per triangle, so ``fn`` is never evaluated
    on the mesh boundary.
    """

    tris = np.arange(mesh.n_triangles) if triangles is None else np.asarray(triangles, dtype=np.int64)
    corners = mesh.nodes[mesh.triangles[tris]]
    points = np.einsum("qa,tak->tqk", _QUADRATURE_BARY, corners).reshape(-1, 2)
    values = np.asarray(fn(points), dtype=float).reshape(tris.size, 3)
    return float(np.sum(mesh.areas[tris] * values.mean(axis=1)))


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Assembled ``Psi``, ``R0`` and ``R1`` for one mesh and observation operator."""

    psi: sparse.csr_matrix
    r0: sparse.csc_matrix
    r1: sparse.csc_matrix
    mesh_ref: str

    @classmethod
    def build(cls, mesh: TriangularMesh, op: ObservationOperator) -> "FemSystem":
        psi = assemble_psi(mesh, op)
        system = cls(
            psi=psi,
            r0=assemble_mass(mesh),
            r1=assemble_stiffness(mesh),
            mesh_ref=mesh.checksum,
        )
        logger.debug("Assembled FEM system: n=%d, K=%d, nnz(psi)=%d", psi.shape[0], psi.shape[1], psi.nnz)
        return system

    @property
    def n_obs(self) -> int:
        return int(self.psi.shape[0])

    @property
    def n_basis(self) -> int:
        return int(self.r0.shape[0])

    @cached_property
    def _mass_lu(self):
        return splu(self.r0.tocsc())

    def penalty_quadratic(self, f_coeffs: np.ndarray) -> float:
        """``f^T R1 R0^{-1} R1 f`` through one sparse solve with ``R0``."""

        r1f = self.r1 @ np.asarray(f_coeffs, dtype=float)
        return float(r1f @ self._mass_lu.solve(r1f))

    def penalty_action(self, f_coeffs: np.ndarray) -> np.ndarray:
        """``P f = R1 R0^{-1} R1 f`` without forming ``P``."""

        r1f = self.r1 @ np.asarray(f_coeffs, dtype=float)
        return np.asarray(self.r1 @ self._mass_lu.solve(r1f))

    def dense_penalty(self) -> np.ndarray:
        """Dense ``P = R1 R0^{-1} R1`` for desk-scale statistics and oracles.

        Raises:
            StatisticsError: If ``K`` exceeds the dense limit.
        """

        if self.n_basis > DENSE_PENALTY_LIMIT:
            raise StatisticsError(
                f"dense penalty needs K <= {DENSE_PENALTY_LIMIT}, mesh has K={self.n_basis}"
            )
        r1 = self.r1.toarray()
        penalty = r1 @ np.linalg.solve(self.r0.toarray(), r1)
        return 0.5 * (penalty + penalty.T)


__all__ = [
    "DENSE_PENALTY_LIMIT",
    "FemSystem",
    "ObservationOperator",
    "ObservationSet",
    "PointObservations",
    "RegionObservations",
    "assemble_mass",
    "assemble_psi",
    "assemble_stiffness",
    "basis_gradients",
    "evaluate_field",
    "integrate_function",
]
