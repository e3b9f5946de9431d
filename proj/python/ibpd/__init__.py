"""Conditional IBP-VAE tooling: data generation, trained-model inspection and the CLI."""

from ._ibpd import (
    ConfigError,
    DimensionError,
    DomainError,
    Error,
    FormatError,
    Model,
    NumericError,
    __version__,
    default_config,
    expected_active,
    load_dataset,
    run_cli,
    sample_prior,
    synth_ecg,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "Error",
    "FormatError",
    "Model",
    "NumericError",
    "__version__",
    "default_config",
    "expected_active",
    "load_dataset",
    "run_cli",
    "sample_prior",
    "synth_ecg",
]
