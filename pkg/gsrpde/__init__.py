"""Generalized spatial regression with Laplacian regularization on triangular meshes."""

from importlib import metadata

__all__ = ["__version__"]

try:
    __version__ = metadata.version("gsrpde")
except metadata.PackageNotFoundError:  # pragma: no cover - during local dev
    __version__ = "0.0.0"
