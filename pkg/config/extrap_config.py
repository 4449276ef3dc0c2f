"""
Extrapolation Certificate Configuration Management.

This module provides configuration loading for the numerical tolerances,
truncation orders and output settings shared by every certificate.
"""

import logging
import os
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from src.extrapolation_errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "EXTRAP_CERT_THREADS"
SECTIONS = ("numerics", "hermite", "gaussian", "output")


@dataclass
class ExtrapConfig:
    """Numerical defaults for the extrapolation certificates."""

    # Linear algebra tolerances
    null_tol: float = 1e-10
    psd_tol: float = 1e-10
    infinite_tol: float = 1e-8

    # Hermite / Mehler settings
    hermite_truncation: int = 60
    hermite_max_order: int = 120
    max_abs_rho: float = 0.99

    # Gaussian certificates
    kappa_truncation: int = 40

    # Output
    output_dir: str = "extrapolation_report"
    threads: int = 1


def get_default_config() -> ExtrapConfig:
    """
    Get default configuration.

    Returns:
        ExtrapConfig with default values
    """
    return ExtrapConfig()


def substitute_env_vars(value: Any) -> Any:
    """
    Substitute environment variables in configuration values.

    Supports ${VAR_NAME} syntax.

    Args:
        value: Value that may contain environment variable references

    Returns:
        Value with environment variables substituted
    """
    if not isinstance(value, str):
        return value

    pattern = r'\$\{([^}]+)\}'

    def replace_var(match):
        var_name = match.group(1)
        return os.environ.get(var_name, match.group(0))

    return re.sub(pattern, replace_var, value)


def load_config_from_yaml(config_path: Optional[str] = None, strict: bool = False) -> Dict[str, Any]:
    """
    Load configuration from YAML file.

    Args:
        config_path: Path to YAML config file. If None, uses default location.
        strict: Raise ConfigError instead of falling back to defaults when the
            file is missing or cannot be parsed.

    Returns:
        Dictionary with configuration values
    """
    if config_path is None:
        project_root = Path(__file__).parent.parent
        config_path = project_root / "config" / "extrap_config.yaml"

    config_path = Path(config_path)

    if not config_path.exists():
        if strict:
            raise ConfigError(f"settings file not found: {config_path}")
        return {}

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config_data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        if strict:
            raise ConfigError(f"cannot parse settings file {config_path}: {e}") from e
        logger.warning(f"Failed to load config from {config_path}: {e}")
        return {}

    if config_data is None:
        return {}
    if not isinstance(config_data, dict):
        if strict:
            raise ConfigError(f"settings file {config_path} must hold a mapping of sections")
        logger.warning(f"Failed to load config from {config_path}: top level is not a mapping")
        return {}
    return config_data


def _threads_from_env(default: int) -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or not raw.strip():
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"{THREADS_ENV_VAR}={raw!r} is not an integer, using {default}")
        return default


def _cast(section: str, key: str, value: Any, current: Any) -> Any:
    try:
        return type(current)(value)
    except (TypeError, ValueError):
        raise ConfigError(
            f"{section}.{key}: expected {type(current).__name__}, got {value!r}"
        ) from None


def load_config(config_path: Optional[str] = None) -> ExtrapConfig:
    """
    Load configuration from YAML file with environment variable substitution.

    The YAML layout groups keys under ``numerics``, ``hermite``, ``gaussian``
    and ``output``; every leaf name must match an ExtrapConfig field.
    EXTRAP_CERT_THREADS overrides ``output.threads``.

    The shipped file is read leniently: a missing or broken file gives the
    defaults and unknown keys are skipped with a warning. An explicitly given
    ``config_path`` is strict and any of those problems raises ConfigError
    naming the file or key.

    Args:
        config_path: Optional path to custom config file

    Returns:
        ExtrapConfig object with loaded settings
    """
    strict = config_path is not None
    config = get_default_config()
    yaml_config = load_config_from_yaml(config_path, strict=strict)

    known = {f.name for f in fields(ExtrapConfig)}
    for section, entries in yaml_config.items():
        if section not in SECTIONS:
            if strict:
                raise ConfigError(f"unknown settings section {section!r} in {config_path}")
            logger.warning(f"Ignoring unknown config section {section}")
            continue
        if entries is None:
            continue
        if not isinstance(entries, dict):
            raise ConfigError(f"settings section {section!r} must be a mapping")
        for key, value in entries.items():
            if key not in known:
                if strict:
                    raise ConfigError(f"unknown settings key {section}.{key} in {config_path}")
                logger.warning(f"Ignoring unknown config key {section}.{key}")
                continue
            value = substitute_env_vars(value)
            setattr(config, key, _cast(section, key, value, getattr(config, key)))

    config.threads = _threads_from_env(config.threads)
    return config
