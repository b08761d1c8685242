"""Utilities for loading and validating gsrpde configuration files."""

import importlib.resources as importlib_resources
from pathlib import Path

import tomllib
from pydantic import ValidationError

from .config_models import GsrpdeConfig, InvalidConfiguration

_KNOWN_SECTIONS = {"solver", "selection", "simulation", "runtime"}


def default_config_path() -> Path | None:
    """Return the packaged configuration file shipped with the module."""

    try:
        resource = importlib_resources.files("gsrpde_config") / "gsrpde.toml"
    except ModuleNotFoundError:  # pragma: no cover - only during broken installs
        return None

    try:
        with importlib_resources.as_file(resource) as resolved:
            if resolved.exists():
                return resolved
    except FileNotFoundError:
        return None
    return None


def load_config(config_path: Path | None) -> GsrpdeConfig:
    """Load and validate a TOML configuration file.

    Args:
        config_path: Path to the TOML file, or ``None`` for built-in defaults.

    Returns:
        Fully populated :class:`GsrpdeConfig` instance.

    Raises:
        InvalidConfiguration: If the file is missing, is not valid TOML, declares an
            unknown section, or fails schema validation.
    """

    if config_path is None:
        return GsrpdeConfig()

    try:
        with config_path.open("rb") as fh:
            payload = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise InvalidConfiguration(f"Configuration file not found: {config_path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfiguration(f"Failed to parse TOML configuration: {exc}") from exc

    unknown = sorted(set(payload) - _KNOWN_SECTIONS)
    if unknown:
        raise InvalidConfiguration(
            f"Unknown configuration section(s): {', '.join(unknown)}. "
            f"Expected a subset of: {', '.join(sorted(_KNOWN_SECTIONS))}."
        )

    try:
        return GsrpdeConfig.model_validate(payload)
    except ValidationError as exc:
        raise InvalidConfiguration(f"Invalid configuration: {exc}") from exc


__all__ = ["default_config_path", "load_config"]
