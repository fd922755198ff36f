"""Guidance-free class-conditional diffusion lab."""

from ._guidefree import (
    ConfigError,
    LabError,
    __version__,
    bayes_accuracy,
    ccdpo_optimum,
    frechet_distance,
    mclr_optimum,
    sample,
    sample_world,
    train,
    verify,
)

__all__ = [
    "ConfigError",
    "LabError",
    "__version__",
    "bayes_accuracy",
    "ccdpo_optimum",
    "frechet_distance",
    "mclr_optimum",
    "sample",
    "sample_world",
    "train",
    "verify",
]
