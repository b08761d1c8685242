"""Exception hierarchy for numerical and input failures."""


class GsrpdeError(Exception):
    """Base class for every error raised by the gsrpde library."""


class MeshFormatError(GsrpdeError):
    """Raised when a mesh or region file cannot be parsed."""


class MeshValidationError(GsrpdeError):
    """Raised when a mesh violates one of its structural invariants."""


class ObservationError(GsrpdeError):
    """Raised when observations are inconsistent with the mesh or with each other."""


class FamilyDomainError(GsrpdeError):
    """Raised when a mean or canonical value lies outside the family domain."""


class SolverError(GsrpdeError):
    """Raised when the penalized least-squares system cannot be solved."""


class RankDeficientError(SolverError):
    """Raised when the (weighted) design matrix is not of full column rank."""


class SingularSystemError(SolverError):
    """Raised when the sparse block system is numerically singular."""


class ConvergenceError(GsrpdeError):
    """Raised when every fit of a smoothing-parameter scan failed."""


class StatisticsError(GsrpdeError):
    """Raised when estimator statistics cannot be computed for the given inputs."""


__all__ = [
    "ConvergenceError",
    "FamilyDomainError",
    "GsrpdeError",
    "MeshFormatError",
    "MeshValidationError",
    "ObservationError",
    "RankDeficientError",
    "SingularSystemError",
    "SolverError",
    "StatisticsError",
]
