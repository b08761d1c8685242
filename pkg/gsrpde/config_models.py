"""Core data models shared across configuration loading, the CLI and fit outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

FamilyName = Literal["gaussian", "poisson", "bernoulli", "gamma"]
StudyCase = Literal["geostat-gamma", "areal-poisson"]


class InvalidConfiguration(Exception):
    """Raised when the configuration file or command-line options cannot be used."""


class FitOptions(BaseModel):
    """Controls of the PIRLS outer loop."""

    model_config = {"extra": "forbid"}

    tol: float = Field(default=1e-6, gt=0.0)
    max_iter: int = Field(default=25, ge=1)
    max_halvings: int = Field(default=10, ge=0)
    weight_floor: float = Field(default=1e-10, gt=0.0)
    verbose: bool = False
    compute_trace: bool = True


class SelectionSettings(BaseModel):
    """Smoothing-parameter grid and GCV inflation factor."""

    model_config = {"extra": "forbid"}

    lambda_min: float = Field(default=1e-6, gt=0.0)
    lambda_max: float = Field(default=1e2, gt=0.0)
    lambda_count: int = Field(default=25, ge=1)
    gamma: float = Field(default=1.0)

    @field_validator("gamma")
    @classmethod
    def _gamma_at_least_one(cls, value: float) -> float:
        if value < 1.0:
            raise ValueError("gamma must be >= 1")
        return value

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "SelectionSettings":
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        return self


class HorseshoeSettings(BaseModel):
    """Geometry of the horseshoe benchmark domain."""

    model_config = {"extra": "forbid"}

    r: float = Field(default=0.5, gt=0.0)
    r0: float = Field(default=0.1, gt=0.0)

    @model_validator(mode="after")
    def _inner_radius_smaller(self) -> "HorseshoeSettings":
        if not self.r0 < self.r:
            raise ValueError("horseshoe requires 0 < r0 < r")
        return self


class GeostatStudySettings(BaseModel):
    """Pointwise gamma study on the horseshoe."""

    model_config = {"extra": "forbid"}

    n: int = Field(default=200, ge=1)
    reps: int = Field(default=20, ge=1)
    phi: float = Field(default=0.1, gt=0.0)
    beta: tuple[float, float] = (-0.4, 0.3)


class ArealStudySettings(BaseModel):
    """Areal Poisson study on the horseshoe partition."""

    model_config = {"extra": "forbid"}

    reps: int = Field(default=20, ge=1)
    beta: float = 5.0


class SimulationSettings(BaseModel):
    model_config = {"extra": "forbid"}

    horseshoe: HorseshoeSettings = Field(default_factory=HorseshoeSettings)
    geostat: GeostatStudySettings = Field(default_factory=GeostatStudySettings)
    areal: ArealStudySettings = Field(default_factory=ArealStudySettings)
    seed: int = 1


class RuntimeSettings(BaseModel):
    model_config = {"extra": "forbid"}

    threads: int = Field(default=1, ge=1)


class GsrpdeConfig(BaseModel):
    """Aggregate settings loaded from ``gsrpde.toml``."""

    model_config = {"extra": "forbid"}

    solver: FitOptions = Field(default_factory=FitOptions)
    selection: SelectionSettings = Field(default_factory=SelectionSettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    runtime: RuntimeSettings = Field(default_factory=RuntimeSettings)


class RunConfig(BaseModel):
    """One command-line invocation after flags, environment and config file are merged."""

    command: str
    mesh: Path | None = None
    data: Path | None = None
    regions: Path | None = None
    family: FamilyName = "gaussian"
    lam: float | None = Field(default=None, gt=0.0)
    gcv: bool = False
    selection: SelectionSettings = Field(default_factory=SelectionSettings)
    options: FitOptions = Field(default_factory=FitOptions)
    seed: int = 1
    out: Path = Path(".")
    threads: int = Field(default=1, ge=1)
    strict: bool = False

    @model_validator(mode="after")
    def _lambda_or_grid(self) -> "RunConfig":
        if self.command in {"fit", "gcv-scan"}:
            if self.lam is not None and self.gcv:
                raise ValueError("--lambda and --gcv are mutually exclusive")
            if self.lam is None and not self.gcv:
                raise ValueError("one of --lambda or --gcv is required")
        return self


class FitDocument(BaseModel):
    """Schema of ``fit.json``."""

    family: FamilyName
    lam: float = Field(alias="lambda")
    covariate_names: list[str] = Field(default_factory=list)
    beta: list[float] = Field(default_factory=list)
    f_coeffs: list[float]
    hat_trace: float | None = None
    phi_hat: float | None = None
    gcv: float | None = None
    iterations: int
    converged: bool
    final_step_adjusted: bool = False
    mesh_checksum: str

    model_config = {"populate_by_name": True}

    def named_beta(self) -> dict[str, float]:
        return dict(zip(self.covariate_names, self.beta))


__all__ = [
    "ArealStudySettings",
    "FamilyName",
    "FitDocument",
    "FitOptions",
    "GeostatStudySettings",
    "GsrpdeConfig",
    "HorseshoeSettings",
    "InvalidConfiguration",
    "RunConfig",
    "RuntimeSettings",
    "SelectionSettings",
    "SimulationSettings",
    "StudyCase",
]
