"""Shared pytest fixtures for gsrpde tests."""

import shutil
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from gsrpde.fem import FemSystem, PointObservations
from gsrpde.mesh import TriangularMesh, load_mesh, load_regions
from gsrpde.simbench import shipped_path


def square_mesh(cells: int, size: float = 1.0) -> TriangularMesh:
    """Structured triangulation of ``[0, size]^2`` with ``cells x cells`` split squares."""

    ticks = np.linspace(0.0, size, cells + 1)
    gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    triangles = []
    for j in range(cells):
        for i in range(cells):
            a = j * (cells + 1) + i
            b, c, d = a + 1, a + cells + 2, a + cells + 1
            triangles.append([a, b, c])
            triangles.append([a, c, d])
    return TriangularMesh.from_arrays(nodes, np.asarray(triangles))


def interior_points(rng: np.random.Generator, n: int, size: float = 1.0) -> np.ndarray:
    return rng.uniform(0.02 * size, 0.98 * size, size=(n, 2))


@pytest.fixture()
def single_triangle() -> TriangularMesh:
    return TriangularMesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture()
def small_square() -> TriangularMesh:
    """4 x 4 cells, K = 25."""

    return square_mesh(4)


@pytest.fixture()
def medium_square() -> TriangularMesh:
    """6 x 6 cells, K = 49."""

    return square_mesh(6)


@pytest.fixture()
def make_square():
    return square_mesh


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture()
def point_system(medium_square: TriangularMesh, rng: np.random.Generator) -> tuple[FemSystem, np.ndarray]:
    points = interior_points(rng, 60)
    return FemSystem.build(medium_square, PointObservations(points)), points


@pytest.fixture(scope="session")
def horseshoe_mesh() -> TriangularMesh:
    return load_mesh(shipped_path("horseshoe.mesh"))


@pytest.fixture(scope="session")
def horseshoe_regions(horseshoe_mesh: TriangularMesh) -> tuple[np.ndarray, ...]:
    return load_regions(shipped_path("horseshoe.regions"), horseshoe_mesh)


@pytest.fixture()
def write_file():
    def _write(path: Path, content: str) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        return path

    return _write


@pytest.fixture(scope="session")
def sample_config_dir(tmp_path_factory: pytest.TempPathFactory) -> Generator[Path, None, None]:
    """Return a temporary copy of the repository configuration bundle."""

    temp_dir = tmp_path_factory.mktemp("config_bundle")
    project_root = Path(__file__).resolve().parent.parent
    dest = temp_dir / "config"
    shutil.copytree(project_root / "config", dest)
    yield dest
