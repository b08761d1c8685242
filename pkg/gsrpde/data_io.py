"""Text-file inputs and outputs: observation CSVs, fit documents, tables and matrix dumps."""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy import sparse

from .config_models import FitDocument
from .errors import ObservationError
from .fem import ObservationSet, PointObservations, RegionObservations
from .mesh import TriangularMesh
from .pirls import FitResult

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
_COVARIATE = re.compile(r"^x(\d+)$")


def atomic_write_text(path: Path, text: str) -> Path:
    """Write ``text`` to a temporary sibling and rename it over ``path``."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("Wrote %s", path)
    return path


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    """CSV with a header, ``.`` decimals, full float precision and empty cells for NaN."""

    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return atomic_write_text(path, text)


def write_mesh(mesh: TriangularMesh, path: Path) -> Path:
    lines = [f"{mesh.n_nodes} {mesh.n_triangles}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def export_coo(matrix: sparse.spmatrix, path: Path) -> Path:
    """Dump ``matrix`` as ``i j value`` lines preceded by a ``rows cols nnz`` header."""

    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    lines += [
        f"{i} {j} {v:.17g}"
        for i, j, v in zip(coo.row[order].tolist(), coo.col[order].tolist(), coo.data[order].tolist())
    ]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_data_frame(path: Path) -> pd.DataFrame:
    """Read an observation CSV.

    Raises:
        ObservationError: If the file is missing, unreadable or lacks the ``y`` column.
    """

    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise ObservationError(f"data file not found: {path}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ObservationError(f"{path}: cannot parse CSV: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    if "y" not in frame.columns:
        raise ObservationError(f"{path}: missing required column 'y'")
    return frame


def is_areal(frame: pd.DataFrame) -> bool:
    return "region_id" in frame.columns


def covariate_columns(frame: pd.DataFrame) -> list[str]:
    """Columns ``x1..xq`` in index order; they must be numbered contiguously."""

    found = sorted(
        ((int(m.group(1)), c) for c in frame.columns if (m := _COVARIATE.match(c))),
    )
    names = [c for _, c in found]
    if [i for i, _ in found] != list(range(1, len(found) + 1)):
        raise ObservationError(f"covariate columns must be x1..xq, found {names}")
    return names


def _numeric(frame: pd.DataFrame, columns: list[str], path: Path) -> np.ndarray:
    try:
        values = frame[columns].to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise ObservationError(f"{path}: non-numeric values in {columns}") from exc
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = bad[0]
        raise ObservationError(f"{path}: row {int(row) + 1} has a missing or non-finite '{columns[col]}'")
    return values


def observations_from_frame(
    frame: pd.DataFrame,
    path: Path,
    regions: tuple[np.ndarray, ...] | None = None,
) -> ObservationSet:
    """Build an :class:`ObservationSet` from a pointwise (``px,py``) or areal (``region_id``) table.

    Raises:
        ObservationError: On schema violations or when areal rows have no region file.
    """

    path = Path(path)
    point_cols = {"px", "py"} <= set(frame.columns)
    if point_cols and is_areal(frame):
        raise ObservationError(f"{path}: rows carry both px,py and region_id")
    y = _numeric(frame, ["y"], path)[:, 0]
    names = covariate_columns(frame)
    X = _numeric(frame, names, path) if names else None

    if is_areal(frame):
        if regions is None:
            raise ObservationError(f"{path}: areal data requires a region file")
        ids = _numeric(frame, ["region_id"], path)[:, 0]
        if np.any(ids != np.round(ids)) or np.any(ids < 0) or np.any(ids >= len(regions)):
            raise ObservationError(f"{path}: region_id values must be integers in [0, {len(regions)})")
        operator: PointObservations | RegionObservations = RegionObservations(
            tuple(regions[int(i)] for i in ids)
        )
    elif point_cols:
        operator = PointObservations(_numeric(frame, ["px", "py"], path))
    else:
        raise ObservationError(f"{path}: expected columns px,py or region_id")
    return ObservationSet(y, operator, X, tuple(names))


def load_observations(
    path: Path, regions: tuple[np.ndarray, ...] | None = None
) -> ObservationSet:
    return observations_from_frame(read_data_frame(path), path, regions)


def read_points(path: Path) -> np.ndarray:
    """Probe points from a CSV with ``px,py`` (or ``x,y``) columns."""

    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise ObservationError(f"points file not found: {path}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    for cols in (["px", "py"], ["x", "y"]):
        if set(cols) <= set(frame.columns):
            return _numeric(frame, cols, Path(path))
    raise ObservationError(f"{path}: expected columns px,py or x,y")


def fit_document(
    result: FitResult, mesh_checksum: str, covariate_names: tuple[str, ...] | None = None
) -> FitDocument:
    return FitDocument(
        family=result.family,
        lam=result.lam,
        covariate_names=list(covariate_names if covariate_names is not None else result.covariate_names),
        beta=result.beta.tolist(),
        f_coeffs=result.f_coeffs.tolist(),
        hat_trace=result.hat_trace,
        phi_hat=result.phi_hat,
        gcv=None if result.gcv is None or not np.isfinite(result.gcv) else result.gcv,
        iterations=result.iterations,
        converged=result.converged,
        final_step_adjusted=result.final_step_adjusted,
        mesh_checksum=mesh_checksum,
    )


def write_fit(document: FitDocument, path: Path) -> Path:
    payload = document.model_dump(by_alias=True)
    return atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def read_fit(path: Path) -> FitDocument:
    """Load ``fit.json``.

    Raises:
        ObservationError: If the file is missing or does not match the schema.
    """

    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ObservationError(f"fit file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ObservationError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return FitDocument.model_validate(payload)
    except ValidationError as exc:
        raise ObservationError(f"{path}: invalid fit document: {exc}") from exc


def grid_points(mesh: TriangularMesh, nx: int, ny: int) -> np.ndarray:
    """``nx * ny`` points spanning the mesh bounding box, x varying slowest."""

    if nx < 1 or ny < 1:
        raise ValueError("grid dimensions must be >= 1")
    xmin, ymin, xmax, ymax = mesh.bounding_box
    xs = np.linspace(xmin, xmax, nx)
    ys = np.linspace(ymin, ymax, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def nodal_frame(mesh: TriangularMesh, coeffs: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "node": np.arange(mesh.n_nodes),
            "x": mesh.nodes[:, 0],
            "y": mesh.nodes[:, 1],
            "f": np.asarray(coeffs, dtype=float),
        }
    )


def point_frame(points: np.ndarray, values: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"x": points[:, 0], "y": points[:, 1], "f": values})


__all__ = [
    "FLOAT_FORMAT",
    "atomic_write_text",
    "covariate_columns",
    "export_coo",
    "fit_document",
    "grid_points",
    "is_areal",
    "load_observations",
    "nodal_frame",
    "observations_from_frame",
    "point_frame",
    "read_data_frame",
    "read_fit",
    "read_points",
    "write_fit",
    "write_mesh",
    "write_table",
]
