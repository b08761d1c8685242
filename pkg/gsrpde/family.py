"""Exponential families with canonical links used by the PIRLS loop."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod

import numpy as np

from .errors import FamilyDomainError

logger = logging.getLogger(__name__)

GAMMA_THETA_CEILING = -1e-10


class ExponentialFamily(ABC):
    """A canonical-link exponential family with ``a(phi) = phi``.

    Subclasses provide the link ``g``, its inverse (``b'``), its derivative, the
    variance function ``V`` and the cumulant ``b``. All maps are elementwise.
    """

    name: str
    scale_known: bool

    @abstractmethod
    def link(self, mu: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def inv_link(self, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def dlink(self, mu: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def variance(self, mu: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def cumulant(self, theta: np.ndarray) -> np.ndarray: ...

    def in_domain(self, mu: np.ndarray) -> np.ndarray:
        """Elementwise mask of means inside the family mean domain."""

        return np.isfinite(mu)

    def check_mean(self, mu: np.ndarray) -> None:
        mu = np.asarray(mu, dtype=float)
        bad = np.flatnonzero(~self.in_domain(mu))
        if bad.size:
            raise FamilyDomainError(
                f"{self.name}: mean {float(mu.flat[bad[0]])!r} outside the mean domain "
                f"(entry {int(bad[0])})"
            )

    def clamp_canonical(self, theta: np.ndarray) -> tuple[np.ndarray, int]:
        """Clamp canonical values into the canonical domain; return the clamp count."""

        return theta, 0

    def initial_mean(self, y: np.ndarray) -> np.ndarray:
        """PIRLS starting mean ``mu0 = y``."""

        return np.asarray(y, dtype=float).copy()

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Gaussian(ExponentialFamily):
    name = "gaussian"
    scale_known = False

    def link(self, mu):
        return np.asarray(mu, dtype=float) * 1.0

    def inv_link(self, theta):
        return np.asarray(theta, dtype=float) * 1.0

    def dlink(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def cumulant(self, theta):
        return 0.5 * np.square(theta)


class Poisson(ExponentialFamily):
    name = "poisson"
    scale_known = True

    def link(self, mu):
        return np.log(mu)

    def inv_link(self, theta):
        with np.errstate(over="ignore"):
            return np.exp(theta)

    def dlink(self, mu):
        return 1.0 / np.asarray(mu, dtype=float)

    def variance(self, mu):
        return np.asarray(mu, dtype=float) * 1.0

    def cumulant(self, theta):
        with np.errstate(over="ignore"):
            return np.exp(theta)

    def in_domain(self, mu):
        return np.isfinite(mu) & (mu > 0)

    def initial_mean(self, y):
        return _positive_start(y)


class Bernoulli(ExponentialFamily):
    name = "bernoulli"
    scale_known = True

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        return np.log(mu / (1.0 - mu))

    def inv_link(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.exp(-np.logaddexp(0.0, -theta))

    def dlink(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 1.0 / (mu * (1.0 - mu))

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu * (1.0 - mu)

    def cumulant(self, theta):
        return np.logaddexp(0.0, theta)

    def in_domain(self, mu):
        return np.isfinite(mu) & (mu > 0) & (mu < 1)

    def initial_mean(self, y):
        return 0.5 * (np.asarray(y, dtype=float) + 0.5)


class Gamma(ExponentialFamily):
    name = "gamma"
    scale_known = False

    def link(self, mu):
        return -1.0 / np.asarray(mu, dtype=float)

    def inv_link(self, theta):
        return -1.0 / np.asarray(theta, dtype=float)

    def dlink(self, mu):
        return 1.0 / np.square(mu)

    def variance(self, mu):
        return np.square(mu)

    def cumulant(self, theta):
        return -np.log(-np.asarray(theta, dtype=float))

    def in_domain(self, mu):
        return np.isfinite(mu) & (mu > 0)

    def clamp_canonical(self, theta):
        theta = np.asarray(theta, dtype=float)
        over = theta >= GAMMA_THETA_CEILING
        count = int(over.sum())
        if count:
            logger.warning(
                "gamma: clamped %d canonical value(s) >= %g to %g", count, GAMMA_THETA_CEILING, GAMMA_THETA_CEILING
            )
            theta = np.where(over, GAMMA_THETA_CEILING, theta)
        return theta, count

    def initial_mean(self, y):
        return _positive_start(y)


def _positive_start(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    eps = 1e-3 * float(np.mean(np.maximum(y, 0.0))) + 1e-8
    return np.maximum(y, eps)


FAMILIES: dict[str, ExponentialFamily] = {
    family.name: family for family in (Gaussian(), Poisson(), Bernoulli(), Gamma())
}


def get_family(name: str) -> ExponentialFamily:
    """Return the family registered under ``name``.

    Raises:
        KeyError: If no family of that name exists.
    """

    try:
        return FAMILIES[name.strip().lower()]
    except KeyError:
        raise KeyError(
            f"Unknown family '{name}'. Available: {', '.join(sorted(FAMILIES))}"
        ) from None


def kernel(family: ExponentialFamily, mu: float) -> tuple[float, float, float]:
    """Return ``(theta, g'(mu), V(mu))`` for a scalar mean.

    Raises:
        FamilyDomainError: If ``mu`` lies outside the family mean domain.
    """

    value = np.asarray(float(mu))
    if not bool(family.in_domain(value)):
        raise FamilyDomainError(f"{family.name}: mean {float(mu)!r} outside the mean domain")
    return (
        float(family.link(value)),
        float(family.dlink(value)),
        float(family.variance(value)),
    )


def initial_mean(family: ExponentialFamily, y: np.ndarray) -> np.ndarray:
    return family.initial_mean(y)


__all__ = [
    "Bernoulli",
    "ExponentialFamily",
    "FAMILIES",
    "GAMMA_THETA_CEILING",
    "Gamma",
    "Gaussian",
    "Poisson",
    "get_family",
    "initial_mean",
    "kernel",
]
