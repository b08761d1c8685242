"""Smoothing-parameter selection by generalized cross-validation and scale estimation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
import pandas as pd

from .config_models import FitOptions, SelectionSettings
from .errors import ConvergenceError, GsrpdeError, StatisticsError

if TYPE_CHECKING:
    from .family import ExponentialFamily
    from .fem import FemSystem, ObservationSet
    from .pirls import FitResult

logger = logging.getLogger(__name__)

SCAN_COLUMNS = ["lambda", "gcv", "edf", "converged"]


def gcv(y: np.ndarray, mu_hat: np.ndarray, hat_trace: float, gamma: float = 1.0) -> float:
    """``n ||y - mu_hat||^2 / (n - gamma tr(M))^2``; ``inf`` for a vanishing denominator."""

    y = np.asarray(y, dtype=float)
    n = y.size
    denominator = n - gamma * hat_trace
    if abs(denominator) <= 1e-12 * n:
        return float("inf")
    rss = float(np.sum(np.square(y - np.asarray(mu_hat, dtype=float))))
    return n * rss / denominator**2


def estimate_phi(
    y: np.ndarray, mu_hat: np.ndarray, family: "ExponentialFamily", hat_trace: float
) -> float:
    """Pearson estimate ``sum((y - mu)^2 / V(mu)) / (n - tr(M))``.

    Raises:
        StatisticsError: If ``n <= tr(M)``.
    """

    y = np.asarray(y, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    dof = y.size - hat_trace
    if dof <= 0.0:
        raise StatisticsError(f"n={y.size} does not exceed tr(M)={hat_trace:.6g}")
    return float(np.sum(np.square(y - mu_hat) / family.variance(mu_hat)) / dof)


def default_lambda_grid(settings: SelectionSettings | None = None) -> np.ndarray:
    """Log-spaced grid, 25 values on ``[1e-6, 1e2]`` unless configured otherwise."""

    s = settings or SelectionSettings()
    return np.geomspace(s.lambda_min, s.lambda_max, s.lambda_count)


@dataclass(frozen=True)
class GcvEntry:
    lam: float
    gcv: float
    hat_trace: float
    converged: bool
    iterations: int = 0
    error: str | None = None

    @property
    def selectable(self) -> bool:
        return self.converged and self.error is None and bool(np.isfinite(self.gcv))


@dataclass(frozen=True, eq=False)
class GcvScan:
    """Per-lambda GCV table in grid order, the selected index and its fit."""

    grid: tuple[GcvEntry, ...]
    best: int
    gamma: float
    best_fit: "FitResult"

    @property
    def best_lambda(self) -> float:
        return self.grid[self.best].lam

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "lambda": [e.lam for e in self.grid],
                "gcv": [e.gcv for e in self.grid],
                "edf": [e.hat_trace for e in self.grid],
                "converged": [e.converged for e in self.grid],
            },
            columns=SCAN_COLUMNS,
        )


def select_best(entries: Sequence[GcvEntry]) -> int:
    """Index of the minimal GCV among selectable entries; ties go to the larger lambda.

    Raises:
        ConvergenceError: If no entry is selectable.
    """

    candidates = [i for i, e in enumerate(entries) if e.selectable]
    if not candidates:
        details = "; ".join(
            f"lambda={e.lam:g}: {e.error or ('not converged' if not e.converged else 'gcv=' + repr(e.gcv))}"
            for e in entries
        )
        raise ConvergenceError(f"no fit in the lambda grid is usable ({details})")
    return min(candidates, key=lambda i: (entries[i].gcv, -entries[i].lam))


def gcv_scan(
    family: "ExponentialFamily | str",
    observations: "ObservationSet",
    fem: "FemSystem",
    X: np.ndarray | None = None,
    lam_grid: Sequence[float] | np.ndarray | None = None,
    gamma: float = 1.0,
    options: FitOptions | None = None,
    *,
    threads: int = 1,
) -> GcvScan:
    """Fit every lambda of the grid independently and select by GCV.

    Fits run on up to ``threads`` worker threads; entries are reduced in grid order.

    Raises:
        ValueError: If the grid is empty or holds a non-positive value.
        ConvergenceError: If no fit converged with a finite GCV.
    """

    from .pirls import fit

    grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0.0):
        raise ValueError("lambda grid values must be positive and finite")
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1")
    opts = (options or FitOptions()).model_copy(update={"compute_trace": True})

    def run(lam: float) -> tuple[GcvEntry, "FitResult | None"]:
        try:
            result = fit(family, observations, fem, X, float(lam), opts, gamma=gamma)
        except GsrpdeError as exc:
            logger.warning("fit at lambda=%g failed: %s", lam, exc)
            return GcvEntry(float(lam), float("inf"), float("nan"), False, 0, str(exc)), None
        value = float("inf") if result.gcv is None else result.gcv
        entry = GcvEntry(
            float(lam), value, float(result.hat_trace or np.nan), result.converged, result.iterations
        )
        return entry, result

    if threads > 1 and grid.size > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, grid.tolist()))
    else:
        outcomes = [run(lam) for lam in grid.tolist()]

    entries = tuple(entry for entry, _ in outcomes)
    best = select_best(entries)
    best_fit = outcomes[best][1]
    assert best_fit is not None
    logger.info("GCV selected lambda=%g (gcv=%.6g, edf=%.4g)", entries[best].lam, entries[best].gcv, entries[best].hat_trace)
    return GcvScan(grid=entries, best=best, gamma=float(gamma), best_fit=best_fit)


__all__ = [
    "GcvEntry",
    "GcvScan",
    "SCAN_COLUMNS",
    "default_lambda_grid",
    "estimate_phi",
    "gcv",
    "gcv_scan",
    "select_best",
]
