"""Penalized iteratively reweighted least squares for the field regression model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config_models import FitOptions
from .errors import FamilyDomainError, StatisticsError
from .family import ExponentialFamily, Gaussian, get_family
from .fem import FemSystem, ObservationSet
from .selection import estimate_phi, gcv
from .solver import PlsSolution, hat_trace, solve_pls

logger = logging.getLogger(__name__)

RELATIVE_GUARD = 1e-10


@dataclass(frozen=True, eq=False)
class PirlsState:
    """Quantities of one PIRLS iteration before the inner solve."""

    mu: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    w: np.ndarray
    k: int
    j_value: float | None = None
    clamped_weights: int = 0


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimates and diagnostics of one fit at a fixed smoothing parameter.

    ``mu_hat`` is the mean after the domain safeguard. When ``final_step_adjusted`` is set, the
    last canonical predictor was clamped or pulled back by step halving, so ``X beta + Psi f``
    differs from ``g(mu_hat)``; ``step_adjustments`` counts such corrections over the whole loop.
    """

    beta: np.ndarray
    f_coeffs: np.ndarray
    lam: float
    iterations: int
    converged: bool
    hat_trace: float | None
    phi_hat: float | None
    gcv: float | None
    objective_trace: tuple[float, ...]
    mu_hat: np.ndarray
    family: str = "gaussian"
    covariate_names: tuple[str, ...] = field(default=())
    clamped_weights: int = 0
    step_adjustments: int = 0
    final_step_adjusted: bool = False

    @property
    def q(self) -> int:
        return int(self.beta.size)


def _as_family(family: ExponentialFamily | str) -> ExponentialFamily:
    return get_family(family) if isinstance(family, str) else family


def _working(
    family: ExponentialFamily, y: np.ndarray, mu: np.ndarray, weight_floor: float
) -> tuple[np.ndarray, np.ndarray, int]:
    family.check_mean(mu)
    theta = family.link(mu)
    dlink = family.dlink(mu)
    variance = family.variance(mu)
    z = dlink * (y - mu) + theta
    with np.errstate(divide="ignore", over="ignore"):
        w = 1.0 / (np.square(dlink) * variance)
    low = ~(w >= weight_floor)
    clamped = int(low.sum())
    if clamped:
        logger.warning("%s: clamped %d working weight(s) to %g", family.name, clamped, weight_floor)
        w = np.where(low, weight_floor, w)
    return z, w, clamped


def working_quantities(
    family: ExponentialFamily | str,
    y: np.ndarray,
    mu: np.ndarray,
    *,
    weight_floor: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-data ``z = g'(mu)(y - mu) + g(mu)`` and weights ``w = 1/(g'(mu)^2 V(mu))``.

    Raises:
        FamilyDomainError: If some ``mu`` lies outside the family mean domain.
    """

    z, w, _ = _working(
        _as_family(family),
        np.asarray(y, dtype=float),
        np.asarray(mu, dtype=float),
        weight_floor,
    )
    return z, w


def _canonical(
    family: ExponentialFamily,
    beta: np.ndarray | None,
    f_coeffs: np.ndarray,
    fem: FemSystem,
    X: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(fem.psi @ np.asarray(f_coeffs, dtype=float))
    if X is not None and beta is not None and np.size(beta):
        theta = theta + np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    mu = family.inv_link(theta)
    bad = np.flatnonzero(~family.in_domain(mu))
    if bad.size:
        raise FamilyDomainError(
            f"{family.name}: canonical value {float(theta[bad[0]])!r} outside the canonical domain "
            f"(entry {int(bad[0])})"
        )
    return theta, mu


def penalized_loglik(
    family: ExponentialFamily | str,
    y: np.ndarray,
    beta: np.ndarray | None,
    f_coeffs: np.ndarray,
    fem: FemSystem,
    X: np.ndarray | None,
    lam: float,
    phi: float = 1.0,
) -> float:
    """``[sum(y theta - b(theta)) - (lambda/2) f^T P f] / phi`` up to terms free of the parameters."""

    fam = _as_family(family)
    y = np.asarray(y, dtype=float)
    theta, _ = _canonical(fam, beta, f_coeffs, fem, X)
    loglik = float(np.sum(y * theta - fam.cumulant(theta)))
    return (loglik - 0.5 * lam * fem.penalty_quadratic(f_coeffs)) / phi


def score_equations(
    family: ExponentialFamily | str,
    y: np.ndarray,
    beta: np.ndarray | None,
    f_coeffs: np.ndarray,
    fem: FemSystem,
    X: np.ndarray | None,
    lam: float,
    phi: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`penalized_loglik` with respect to ``beta`` and ``f``.

    Both components vanish at the penalized maximum.
    """

    fam = _as_family(family)
    y = np.asarray(y, dtype=float)
    _, mu = _canonical(fam, beta, f_coeffs, fem, X)
    resid = y - mu
    grad_beta = np.zeros(0) if X is None else np.asarray(X, dtype=float).T @ resid / phi
    grad_f = (np.asarray(fem.psi.T @ resid) - lam * fem.penalty_action(f_coeffs)) / phi
    return grad_beta, grad_f


def _working_objective(
    solution: PlsSolution, X: np.ndarray | None, z: np.ndarray, w: np.ndarray
) -> float:
    resid = z - solution.linear_predictor(X)
    return float(np.sum(w * np.square(resid)) + solution.lam * solution.roughness)


def _safeguard(
    family: ExponentialFamily, theta_old: np.ndarray, theta_new: np.ndarray, max_halvings: int
) -> tuple[np.ndarray, np.ndarray, int]:
    """Return the safeguarded ``(theta, mu)`` and the number of clamps plus halvings applied."""

    theta_new, clamped = family.clamp_canonical(theta_new)
    mu = family.inv_link(theta_new)
    halvings = 0
    while not np.all(family.in_domain(mu)):
        if halvings >= max_halvings:
            raise FamilyDomainError(
                f"{family.name}: mean left the domain after {max_halvings} step halvings"
            )
        theta_new = 0.5 * (theta_old + theta_new)
        mu = family.inv_link(theta_new)
        halvings += 1
    if halvings:
        logger.info("%s: step halved %d time(s) to stay in the mean domain", family.name, halvings)
    return theta_new, mu, clamped + halvings


def fit(
    family: ExponentialFamily | str,
    observations: ObservationSet,
    fem: FemSystem,
    X: np.ndarray | None = None,
    lam: float = 1.0,
    options: FitOptions | None = None,
    *,
    gamma: float = 1.0,
) -> FitResult:
    """Fit ``g(mu) = X beta + f`` at a fixed smoothing parameter.

    Args:
        family: Family instance or registered name.
        observations: Responses and operator; ``X`` defaults to ``observations.X``.
        fem: System assembled for the same operator.
        X: Optional covariate matrix overriding the one in ``observations``.
        lam: Smoothing parameter.
        options: Loop controls.
        gamma: GCV inflation factor recorded with the result.

    Returns:
        FitResult with ``converged=False`` when the loop hit ``max_iter``.

    Raises:
        FamilyDomainError: If the iterates cannot be kept in the mean domain.
        SolverError: If an inner solve fails.
    """

    fam = _as_family(family)
    opts = options or FitOptions()
    if X is None:
        X = observations.X
    y = observations.y
    if fem.n_obs != observations.n:
        raise ValueError(f"FEM system describes {fem.n_obs} observations, data has {observations.n}")

    mu = fam.initial_mean(y)
    theta = fam.link(mu)
    trace: list[float] = []
    j_prev: float | None = None
    converged = False
    clamped_total = 0
    adjustments = 0
    last_adjusted = False
    solution: PlsSolution | None = None
    w = np.ones_like(y)

    for k in range(1, opts.max_iter + 1):
        z, w, clamped = _working(fam, y, mu, opts.weight_floor)
        clamped_total += clamped
        state = PirlsState(mu=mu, theta=theta, z=z, w=w, k=k, j_value=j_prev, clamped_weights=clamped)
        solution = solve_pls(fem, X, state.z, state.w, lam, compute_trace=False)
        j_value = _working_objective(solution, X, state.z, state.w)
        trace.append(j_value)
        theta, mu, adjusted = _safeguard(fam, state.theta, solution.linear_predictor(X), opts.max_halvings)
        adjustments += adjusted
        last_adjusted = adjusted > 0
        change = float("nan") if j_prev is None else abs(j_value - j_prev) / (abs(j_prev) + RELATIVE_GUARD)
        logger.log(
            logging.INFO if opts.verbose else logging.DEBUG,
            "PIRLS %s lambda=%g iter=%d J=%.10g change=%.3g",
            fam.name,
            lam,
            k,
            j_value,
            change,
        )
        if isinstance(fam, Gaussian):
            converged = True
            break
        if change < opts.tol:
            converged = True
            break
        j_prev = j_value

    assert solution is not None
    if not converged:
        logger.warning(
            "%s fit at lambda=%g did not converge in %d iterations", fam.name, lam, opts.max_iter
        )
    if last_adjusted:
        logger.warning(
            "%s fit at lambda=%g: final step was clamped or halved; mu_hat is not g^-1(X beta + Psi f)",
            fam.name,
            lam,
        )

    edf = hat_trace(fem, X, w, lam) if opts.compute_trace else None
    phi_hat: float | None = 1.0 if fam.scale_known else None
    gcv_value: float | None = None
    if edf is not None:
        gcv_value = gcv(y, mu, edf, gamma)
        if not fam.scale_known:
            try:
                phi_hat = estimate_phi(y, mu, fam, edf)
            except StatisticsError as exc:
                logger.warning("scale parameter not estimated: %s", exc)

    beta = np.zeros(0) if solution.beta is None else solution.beta
    names = observations.covariate_names
    if len(names) != beta.size:
        names = tuple(f"x{j + 1}" for j in range(beta.size))
    return FitResult(
        beta=beta,
        f_coeffs=solution.f_coeffs,
        lam=float(lam),
        iterations=len(trace),
        converged=converged,
        hat_trace=edf,
        phi_hat=phi_hat,
        gcv=gcv_value,
        objective_trace=tuple(trace),
        mu_hat=mu,
        family=fam.name,
        covariate_names=names,
        clamped_weights=clamped_total,
        step_adjustments=adjustments,
        final_step_adjusted=last_adjusted,
    )


__all__ = [
    "FitResult",
    "PirlsState",
    "fit",
    "penalized_loglik",
    "score_equations",
    "working_quantities",
]
