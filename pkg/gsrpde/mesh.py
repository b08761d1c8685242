"""Conforming triangular meshes of planar domains: loading, validation and point location."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshFormatError, MeshValidationError

logger = logging.getLogger(__name__)

BARYCENTRIC_TOL = 1e-12
DUPLICATE_NODE_TOL = 1e-12


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass(frozen=True, eq=False)
class TriangularMesh:
    """Validated, counterclockwise-oriented triangulation of a planar domain.

    Instances are immutable: the coordinate and connectivity arrays are flagged
    read-only, and every derived quantity is computed once and cached. Build them
    with :meth:`from_arrays` or :func:`load_mesh`, which check every invariant.

    Attributes:
        nodes: ``(K, 2)`` array of node coordinates.
        triangles: ``(T, 3)`` array of 0-based node indices, counterclockwise.
    """

    nodes: np.ndarray
    triangles: np.ndarray

    @classmethod
    def from_arrays(cls, nodes: object, triangles: object) -> "TriangularMesh":
        """Validate raw arrays, reorient clockwise triangles and build a mesh.

        Raises:
            MeshValidationError: On the first violated invariant, naming the
                offending triangle, node or edge.
        """

        node_arr = np.array(nodes, dtype=float)
        if node_arr.ndim != 2 or node_arr.shape[1] != 2 or node_arr.shape[0] < 3:
            raise MeshValidationError("nodes must be a (K, 2) array with K >= 3")
        if not np.all(np.isfinite(node_arr)):
            bad = int(np.flatnonzero(~np.isfinite(node_arr).all(axis=1))[0])
            raise MeshValidationError(f"non-finite coordinate, node {bad}")

        raw_tri = np.asarray(triangles)
        if raw_tri.ndim != 2 or raw_tri.shape[1] != 3 or raw_tri.shape[0] < 1:
            raise MeshValidationError("triangles must be a (T, 3) array with T >= 1")
        if not np.issubdtype(raw_tri.dtype, np.integer):
            if not np.all(np.equal(np.mod(raw_tri, 1), 0)):
                raise MeshValidationError("triangle indices must be integers")
        tri = raw_tri.astype(np.int64)

        n_nodes = node_arr.shape[0]
        out_of_range = np.flatnonzero(((tri < 0) | (tri >= n_nodes)).any(axis=1))
        if out_of_range.size:
            raise MeshValidationError(f"index out of range, triangle {int(out_of_range[0])}")

        repeated = np.flatnonzero(
            (tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])
        )
        if repeated.size:
            raise MeshValidationError(f"repeated vertex, triangle {int(repeated[0])}")

        unused = np.setdiff1d(np.arange(n_nodes), np.unique(tri))
        if unused.size:
            raise MeshValidationError(f"node {int(unused[0])} is not used by any triangle")

        span = float(np.ptp(node_arr, axis=0).max())
        if span <= 0.0:
            raise MeshValidationError("all nodes coincide")
        pairs = cKDTree(node_arr).query_pairs(DUPLICATE_NODE_TOL * span, output_type="ndarray")
        if len(pairs):
            first = sorted(tuple(sorted(map(int, pair))) for pair in pairs)[0]
            raise MeshValidationError(f"duplicate nodes {first[0]} and {first[1]}")

        a = node_arr[tri[:, 0]]
        signed = 0.5 * _cross(node_arr[tri[:, 1]] - a, node_arr[tri[:, 2]] - a)
        degenerate = np.flatnonzero(np.abs(signed) <= 1e-14 * span * span)
        if degenerate.size:
            raise MeshValidationError(f"degenerate (zero-area) triangle {int(degenerate[0])}")
        clockwise = signed < 0
        if clockwise.any():
            logger.info("Reorienting %d clockwise triangle(s) counterclockwise.", int(clockwise.sum()))
            tri[clockwise] = tri[clockwise][:, [0, 2, 1]]

        _check_conformity(node_arr, tri, span)

        node_arr.setflags(write=False)
        tri.setflags(write=False)
        return cls(nodes=node_arr, triangles=tri)

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def areas(self) -> np.ndarray:
        """Areas of all triangles."""

        a = self.nodes[self.triangles[:, 0]]
        v0 = self.nodes[self.triangles[:, 1]] - a
        v1 = self.nodes[self.triangles[:, 2]] - a
        areas = 0.5 * _cross(v0, v1)
        areas.setflags(write=False)
        return areas

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def span(self) -> float:
        return float(np.ptp(self.nodes, axis=0).max())

    @property
    def bounding_box(self) -> tuple[float, float, float, float]:
        """``(xmin, ymin, xmax, ymax)`` of the node cloud."""

        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def triangle_area(self, t: int) -> float:
        """Return the Euclidean area of triangle ``t``.

        Raises:
            IndexError: If ``t`` is not in ``[0, T)``.
        """

        if not 0 <= t < self.n_triangles:
            raise IndexError(f"triangle index {t} out of range [0, {self.n_triangles})")
        return float(self.areas[t])

    @cached_property
    def checksum(self) -> str:
        """SHA-256 of the canonical node and triangle arrays."""

        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.nodes, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return digest.hexdigest()

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Directed edges that belong to exactly one triangle, in triangle orientation."""

        directed = _directed_edges(self.triangles)
        keys = np.sort(directed, axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        edges = directed[counts[inverse.ravel()] == 1]
        edges.setflags(write=False)
        return edges

    def boundary_loops(self) -> list[np.ndarray]:
        """Return closed boundary node loops, outer loops counterclockwise.

        Raises:
            MeshValidationError: If the boundary is not a union of simple loops.
        """

        successor: dict[int, int] = {}
        for start, end in self.boundary_edges.tolist():
            if start in successor:
                raise MeshValidationError(f"boundary is not a simple loop at node {start}")
            successor[start] = end

        loops: list[np.ndarray] = []
        remaining = dict(sorted(successor.items()))
        while remaining:
            first = next(iter(remaining))
            loop = [first]
            current = remaining.pop(first)
            while current != first:
                if current not in remaining:
                    raise MeshValidationError(f"open boundary chain at node {current}")
                loop.append(current)
                current = remaining.pop(current)
            loops.append(np.asarray(loop, dtype=np.int64))
        return loops

    def polygon_area(self) -> float:
        """Shoelace area enclosed by the boundary loops (holes subtract)."""

        total = 0.0
        for loop in self.boundary_loops():
            pts = self.nodes[loop]
            nxt = np.roll(pts, -1, axis=0)
            total += 0.5 * float(np.sum(pts[:, 0] * nxt[:, 1] - nxt[:, 0] * pts[:, 1]))
        return total

    @cached_property
    def _affine(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        a = self.nodes[self.triangles[:, 0]]
        v0 = self.nodes[self.triangles[:, 1]] - a
        v1 = self.nodes[self.triangles[:, 2]] - a
        return a, v0, v1, _cross(v0, v1)

    def _barycentric(self, candidates: np.ndarray, p: np.ndarray) -> np.ndarray:
        a, v0, v1, det = self._affine
        v2 = p - a[candidates]
        lb = _cross(v2, v1[candidates]) / det[candidates]
        lc = _cross(v0[candidates], v2) / det[candidates]
        return np.column_stack((1.0 - lb - lc, lb, lc))

    def _first_containing(
        self, candidates: np.ndarray, p: np.ndarray
    ) -> tuple[int, np.ndarray] | None:
        if candidates.size == 0:
            return None
        bary = self._barycentric(candidates, p)
        inside = np.flatnonzero((bary >= -BARYCENTRIC_TOL).all(axis=1))
        if inside.size == 0:
            return None
        coords = np.clip(bary[inside[0]], 0.0, 1.0)
        return int(candidates[inside[0]]), coords / coords.sum()

    def locate(self, p: object) -> tuple[int, np.ndarray] | None:
        """Find the lowest-index triangle containing ``p`` by brute force.

        Returns:
            ``(triangle index, barycentric coordinates)`` with the coordinates clamped
            to ``[0, 1]`` and renormalized, or ``None`` when ``p`` is outside the mesh.
        """

        point = np.asarray(p, dtype=float).reshape(2)
        return self._first_containing(np.arange(self.n_triangles), point)

    @cached_property
    def locator(self) -> "BucketLocator":
        return BucketLocator(self)

    def locate_many(
        self, points: object, accelerated: bool = True
    ) -> tuple[np.ndarray, np.ndarray]:
        """Locate several points at once.

        Args:
            points: ``(m, 2)`` coordinates.
            accelerated: Use the uniform-grid bucket index instead of brute force.
                Both paths return identical results.

        Returns:
            ``(triangle indices, barycentric coordinates)``; exterior points get
            index ``-1`` and NaN coordinates.
        """

        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        tri = np.full(pts.shape[0], -1, dtype=np.int64)
        bary = np.full((pts.shape[0], 3), np.nan)
        for row, point in enumerate(pts):
            hit = self.locator.locate(point) if accelerated else self.locate(point)
            if hit is not None:
                tri[row], bary[row] = hit
        return tri, bary


class BucketLocator:
    """Uniform grid of buckets listing the triangles whose bounding box meets each cell."""

    def __init__(self, mesh: TriangularMesh):
        self._mesh = mesh
        n_cells = max(1, int(math.ceil(math.sqrt(mesh.n_triangles))))
        xmin, ymin, xmax, ymax = mesh.bounding_box
        pad = 1e-9 * mesh.span
        self._origin = np.array([xmin - pad, ymin - pad])
        extent = np.array([xmax - xmin, ymax - ymin]) + 2 * pad
        self._shape = (n_cells, n_cells)
        self._cell = np.where(extent > 0, extent / n_cells, 1.0)

        corners = mesh.nodes[mesh.triangles]
        lo = self._cell_index(corners.min(axis=1) - pad)
        hi = self._cell_index(corners.max(axis=1) + pad)
        buckets: list[list[int]] = [[] for _ in range(n_cells * n_cells)]
        for t in range(mesh.n_triangles):
            for i in range(lo[t, 0], hi[t, 0] + 1):
                for j in range(lo[t, 1], hi[t, 1] + 1):
                    buckets[i * n_cells + j].append(t)
        self._buckets = [np.asarray(b, dtype=np.int64) for b in buckets]

    def _cell_index(self, pts: np.ndarray) -> np.ndarray:
        idx = np.floor((pts - self._origin) / self._cell).astype(np.int64)
        return np.clip(idx, 0, np.array(self._shape) - 1)

    def locate(self, p: np.ndarray) -> tuple[int, np.ndarray] | None:
        rel = (p - self._origin) / self._cell
        if np.any(rel < 0) or np.any(rel > np.array(self._shape)):
            return None
        i, j = self._cell_index(p[None, :])[0]
        return self._mesh._first_containing(self._buckets[i * self._shape[1] + j], p)


def _directed_edges(triangles: np.ndarray) -> np.ndarray:
    return np.concatenate(
        (triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]), axis=0
    )


def _check_conformity(nodes: np.ndarray, triangles: np.ndarray, span: float) -> None:
    keys = np.sort(_directed_edges(triangles), axis=1)
    unique, counts = np.unique(keys, axis=0, return_counts=True)
    crowded = np.flatnonzero(counts > 2)
    if crowded.size:
        i, j = unique[crowded[0]]
        raise MeshValidationError(f"edge ({int(i)}, {int(j)}) is shared by more than two triangles")

    # A hanging node always sits inside an edge that only one triangle sees.
    boundary = unique[counts == 1]
    start = nodes[boundary[:, 0]]
    direction = nodes[boundary[:, 1]] - start
    length2 = np.einsum("ij,ij->i", direction, direction)
    tol = 1e-12 * span * span
    for e in range(boundary.shape[0]):
        rel = nodes - start[e]
        along = rel @ direction[e]
        across = np.abs(_cross(direction[e], rel))
        inside = (across <= tol) & (along > tol) & (along < length2[e] - tol)
        hits = np.flatnonzero(inside)
        if hits.size:
            a, b = boundary[e]
            raise MeshValidationError(
                f"non-conforming mesh: node {int(hits[0])} lies inside edge ({int(a)}, {int(b)})"
            )


def _content_lines(path: Path, error: type[Exception]) -> list[tuple[int, list[str]]]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise error(f"File not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise error(f"{path} is not UTF-8 text: {exc}") from exc

    lines: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            lines.append((lineno, content.split()))
    return lines


def load_mesh(path: Path) -> TriangularMesh:
    """Parse a mesh file and return a validated mesh.

    The format is: a header ``K T``, then ``K`` lines ``x y`` and ``T`` lines ``i j k``
    with 0-based node indices; ``#`` starts a comment.

    Raises:
        MeshFormatError: On malformed lines or wrong counts.
        MeshValidationError: When the parsed mesh violates an invariant.
    """

    path = Path(path)
    lines = _content_lines(path, MeshFormatError)
    if not lines:
        raise MeshFormatError(f"{path}: empty mesh file")

    lineno, header = lines[0]
    try:
        if len(header) != 2:
            raise ValueError
        n_nodes, n_triangles = int(header[0]), int(header[1])
    except ValueError as exc:
        raise MeshFormatError(f"{path}:{lineno}: header must be 'K T'") from exc
    if n_nodes < 0 or n_triangles < 0:
        raise MeshFormatError(f"{path}:{lineno}: counts must be nonnegative")

    body = lines[1:]
    if len(body) != n_nodes + n_triangles:
        raise MeshFormatError(
            f"{path}: expected {n_nodes} node lines and {n_triangles} triangle lines, "
            f"found {len(body)} data lines"
        )

    nodes = np.empty((n_nodes, 2))
    for row, (lineno, tokens) in enumerate(body[:n_nodes]):
        try:
            if len(tokens) != 2:
                raise ValueError
            nodes[row] = [float(tokens[0]), float(tokens[1])]
        except ValueError as exc:
            raise MeshFormatError(f"{path}:{lineno}: node line must be 'x y'") from exc

    triangles = np.empty((n_triangles, 3), dtype=np.int64)
    for row, (lineno, tokens) in enumerate(body[n_nodes:]):
        try:
            if len(tokens) != 3:
                raise ValueError
            triangles[row] = [int(tok) for tok in tokens]
        except ValueError as exc:
            raise MeshFormatError(f"{path}:{lineno}: triangle line must be 'i j k'") from exc

    mesh = TriangularMesh.from_arrays(nodes, triangles)
    logger.debug("Loaded mesh %s with K=%d, T=%d", path, mesh.n_nodes, mesh.n_triangles)
    return mesh


def load_regions(path: Path, mesh: TriangularMesh) -> tuple[np.ndarray, ...]:
    """Read a region file (``region_id triangle_index`` lines) for ``mesh``.

    Returns:
        One sorted array of triangle indices per region, ordered by region id.

    Raises:
        MeshFormatError: On malformed lines.
        MeshValidationError: When ids are not contiguous from 0, a triangle index is
            out of range, or a triangle belongs to two regions.
    """

    path = Path(path)
    members: dict[int, list[int]] = {}
    owner: dict[int, int] = {}
    for lineno, tokens in _content_lines(path, MeshFormatError):
        try:
            if len(tokens) != 2:
                raise ValueError
            region, triangle = int(tokens[0]), int(tokens[1])
        except ValueError as exc:
            raise MeshFormatError(
                f"{path}:{lineno}: region line must be 'region_id triangle_index'"
            ) from exc
        if not 0 <= triangle < mesh.n_triangles:
            raise MeshValidationError(f"{path}:{lineno}: triangle {triangle} out of range")
        if region < 0:
            raise MeshValidationError(f"{path}:{lineno}: negative region id {region}")
        if triangle in owner and owner[triangle] != region:
            raise MeshValidationError(
                f"triangle {triangle} belongs to regions {owner[triangle]} and {region}"
            )
        owner[triangle] = region
        members.setdefault(region, []).append(triangle)

    if not members:
        raise MeshFormatError(f"{path}: no regions defined")
    expected = list(range(len(members)))
    if sorted(members) != expected:
        missing = sorted(set(expected) - set(members))
        raise MeshValidationError(
            f"region ids must be contiguous from 0; missing region {missing[0] if missing else '?'}"
        )
    return tuple(np.unique(np.asarray(members[r], dtype=np.int64)) for r in expected)


__all__ = [
    "BARYCENTRIC_TOL",
    "BucketLocator",
    "TriangularMesh",
    "load_mesh",
    "load_regions",
]
