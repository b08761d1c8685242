"""Tests for the penalized least-squares block solver and the hat-matrix trace."""

import numpy as np
import pytest

from gsrpde.errors import RankDeficientError
from gsrpde.fem import FemSystem, PointObservations, RegionObservations
from gsrpde.pirls import working_quantities
from gsrpde.solver import dense_pls_oracle, hat_trace, solve_pls


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_single_triangle_matches_dense_solution(single_triangle) -> None:
    fem = FemSystem.build(single_triangle, PointObservations(single_triangle.nodes))
    z = np.array([1.0, 2.0, -0.5])
    solution = solve_pls(fem, None, z, np.ones(3), 1e-3)
    psi = fem.psi.toarray()
    expected = np.linalg.solve(psi.T @ psi + 1e-3 * fem.dense_penalty(), psi.T @ z)
    assert _relative(solution.f_coeffs, expected) < 1e-10
    assert solution.beta is None
    assert solution.hat_trace is not None and 0.0 <= solution.hat_trace <= 3.0


@pytest.mark.parametrize("lam", [1e-4, 1e-1, 10.0])
def test_block_solution_matches_dense_oracle_with_weights(point_system, rng, lam: float) -> None:
    fem, points = point_system
    n = fem.n_obs
    X = np.column_stack([1.0 + rng.uniform(size=n), rng.standard_normal(n)])
    z = np.sin(3 * points[:, 0]) + rng.standard_normal(n)
    w = rng.uniform(0.5, 2.0, n)
    block = solve_pls(fem, X, z, w, lam)
    dense = dense_pls_oracle(fem, X, z, w, lam)
    assert _relative(block.f_coeffs, dense.f_coeffs) < 1e-8
    assert _relative(block.beta, dense.beta) < 1e-8
    assert block.hat_trace == pytest.approx(dense.hat_trace, rel=1e-8)
    assert block.roughness == pytest.approx(dense.roughness, rel=1e-6, abs=1e-10)


@pytest.mark.parametrize("family", ["gaussian", "poisson", "gamma"])
@pytest.mark.parametrize("lam", [1e-3, 0.05, 2.0])
def test_stacked_least_squares_oracle(point_system, rng, family: str, lam: float) -> None:
    fem, points = point_system
    n, k = fem.n_obs, fem.n_basis
    X = rng.standard_normal((n, 1))
    # Working data and weights as one PIRLS step of the family would produce them.
    mu = {"gaussian": np.zeros(n), "poisson": np.exp(points[:, 0]), "gamma": 1.0 + points[:, 1]}[family]
    y = mu + 0.3 * np.abs(rng.standard_normal(n))
    z, w = working_quantities(family, y, mu)
    solution = solve_pls(fem, X, z, w, lam, compute_trace=False)

    # Minimize ||W^1/2 (z - X b - Psi f)||^2 + lam ||C f||^2 with C^T C = P.
    penalty = fem.dense_penalty()
    eigval, eigvec = np.linalg.eigh(penalty)
    root = (eigvec * np.sqrt(np.clip(eigval, 0.0, None))).T
    sw = np.sqrt(w)
    design = np.vstack(
        [
            np.hstack([sw[:, None] * X, sw[:, None] * fem.psi.toarray()]),
            np.hstack([np.zeros((k, 1)), np.sqrt(lam) * root]),
        ]
    )
    target = np.concatenate([sw * z, np.zeros(k)])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    assert _relative(solution.beta, coef[:1]) < 1e-8
    assert _relative(solution.f_coeffs, coef[1:]) < 1e-8


def test_weak_form_residual_vanishes(point_system, rng) -> None:
    fem, _ = point_system
    n = fem.n_obs
    X = np.column_stack([rng.uniform(size=n), rng.standard_normal(n)])
    z = rng.standard_normal(n)
    w = rng.uniform(0.5, 1.5, n)
    lam = 0.3
    sol = solve_pls(fem, X, z, w, lam, compute_trace=False)

    sw = np.sqrt(w)
    xw = sw[:, None] * X
    projector = np.eye(n) - xw @ np.linalg.solve(xw.T @ xw, xw.T)
    psi_w = sw[:, None] * fem.psi.toarray()
    residual = psi_w.T @ projector @ (psi_w @ sol.f_coeffs - sw * z) - lam * (fem.r1 @ sol.h_coeffs)
    scale = np.linalg.norm(psi_w.T @ (sw * z)) + 1.0
    assert np.max(np.abs(residual)) <= 1e-8 * scale
    np.testing.assert_allclose(fem.r0 @ sol.h_coeffs, -(fem.r1 @ sol.f_coeffs), atol=1e-10)


def test_parametric_part_absorbs_data_in_its_span(point_system, rng) -> None:
    fem, _ = point_system
    n = fem.n_obs
    X = rng.standard_normal((n, 2))
    z = X @ np.array([1.5, -2.0])
    sol = solve_pls(fem, X, z, np.ones(n), 0.1)
    residual = z - X @ sol.beta - sol.fitted_fn
    assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(z)
    assert sol.roughness <= 1e-12 * float(z @ z)
    np.testing.assert_allclose(sol.beta, [1.5, -2.0], atol=1e-8)


def test_permuting_observations_leaves_estimates_unchanged(medium_square, rng) -> None:
    points = rng.uniform(0.05, 0.95, size=(40, 2))
    X = rng.standard_normal((40, 1))
    z = rng.standard_normal(40)
    w = rng.uniform(0.5, 2.0, 40)
    perm = rng.permutation(40)
    base = solve_pls(FemSystem.build(medium_square, PointObservations(points)), X, z, w, 0.2)
    shuffled = solve_pls(
        FemSystem.build(medium_square, PointObservations(points[perm])), X[perm], z[perm], w[perm], 0.2
    )
    np.testing.assert_allclose(shuffled.f_coeffs, base.f_coeffs, atol=1e-12, rtol=1e-10)
    np.testing.assert_allclose(shuffled.beta, base.beta, atol=1e-12, rtol=1e-10)


def test_column_orderings_agree(point_system, rng) -> None:
    fem, _ = point_system
    z = rng.standard_normal(fem.n_obs)
    w = np.ones(fem.n_obs)
    a = solve_pls(fem, None, z, w, 0.01, ordering="COLAMD")
    b = solve_pls(fem, None, z, w, 0.01, ordering="MMD_AT_PLUS_A")
    assert _relative(a.f_coeffs, b.f_coeffs) < 1e-10


def test_hat_trace_limits(single_triangle, make_square) -> None:
    fem = FemSystem.build(single_triangle, PointObservations(single_triangle.nodes))
    X = np.array([[1.0], [2.0], [4.0]])
    assert hat_trace(fem, X, np.ones(3), 1e12) <= 1 + 3 + 1e-8

    mesh = make_square(3)
    fem_nodes = FemSystem.build(mesh, PointObservations(mesh.nodes))
    assert hat_trace(fem_nodes, None, np.ones(mesh.n_nodes), 1e-12) == pytest.approx(mesh.n_nodes, abs=0.01)


def test_hat_trace_is_nonincreasing_and_bounded(point_system, rng) -> None:
    fem, _ = point_system
    n = fem.n_obs
    X = np.column_stack([1.0 + rng.uniform(size=n), rng.standard_normal(n)])
    w = rng.uniform(0.5, 2.0, n)
    traces = [hat_trace(fem, X, w, lam) for lam in np.geomspace(1e-6, 1e4, 15)]
    assert all(b <= a + 1e-8 for a, b in zip(traces, traces[1:]))
    assert all(2.0 - 1e-8 <= t <= 2.0 + fem.n_basis + 1e-8 for t in traces)
    assert traces[-1] < traces[0]


def test_trace_with_more_observations_than_nodes(small_square, rng) -> None:
    points = rng.uniform(0.0, 1.0, size=(60, 2))
    fem = FemSystem.build(small_square, PointObservations(points))
    w = rng.uniform(0.5, 2.0, 60)
    X = rng.standard_normal((60, 1))
    block = hat_trace(fem, X, w, 0.05)
    dense = dense_pls_oracle(fem, X, np.zeros(60), w, 0.05).hat_trace
    assert block == pytest.approx(dense, rel=1e-9)


def test_rank_deficient_design_is_rejected(point_system) -> None:
    fem, _ = point_system
    n = fem.n_obs
    col = np.linspace(0.0, 1.0, n)
    X = np.column_stack([col, 2.0 * col])
    with pytest.raises(RankDeficientError, match="rank deficient"):
        solve_pls(fem, X, np.zeros(n), np.ones(n), 1.0)


def test_intercept_column_is_rejected(point_system, rng) -> None:
    fem, _ = point_system
    n = fem.n_obs
    X = np.column_stack([np.full(n, 3.0), rng.standard_normal(n)])
    with pytest.raises(RankDeficientError, match="constant field"):
        solve_pls(fem, X, np.zeros(n), rng.uniform(0.5, 2.0, n), 1.0)


def _uneven_regions(mesh) -> RegionObservations:
    """Consecutive triangles grouped into regions of 1, 2 and 3 triangles."""

    regions, start, size = [], 0, 1
    while start < mesh.n_triangles:
        regions.append(np.arange(start, min(start + size, mesh.n_triangles)))
        start += size
        size = size % 3 + 1
    return RegionObservations(tuple(regions))


def test_areal_intercept_is_identified(medium_square, rng) -> None:
    fem = FemSystem.build(medium_square, _uneven_regions(medium_square))
    n = fem.n_obs
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    z = rng.standard_normal(n)
    w = rng.uniform(0.5, 2.0, n)
    block = solve_pls(fem, X, z, w, 0.1)
    dense = dense_pls_oracle(fem, X, z, w, 0.1)
    assert _relative(block.beta, dense.beta) < 1e-8
    assert _relative(block.f_coeffs, dense.f_coeffs) < 1e-8


def test_areal_column_proportional_to_region_areas_is_rejected(medium_square, rng) -> None:
    fem = FemSystem.build(medium_square, _uneven_regions(medium_square))
    n = fem.n_obs
    areas = np.asarray(fem.psi @ np.ones(fem.n_basis)).ravel()
    X = np.column_stack([2.0 * areas, rng.standard_normal(n)])
    with pytest.raises(RankDeficientError, match="Psi 1"):
        solve_pls(fem, X, rng.standard_normal(n), np.ones(n), 0.1)


def test_invalid_inputs(point_system) -> None:
    fem, _ = point_system
    n = fem.n_obs
    with pytest.raises(ValueError, match="lambda must be a positive"):
        solve_pls(fem, None, np.zeros(n), np.ones(n), 0.0)
    with pytest.raises(ValueError, match="weights must be positive"):
        solve_pls(fem, None, np.zeros(n), np.zeros(n), 1.0)
    with pytest.raises(ValueError, match="expected 60 pseudo-data"):
        solve_pls(fem, None, np.zeros(3), np.ones(3), 1.0)
