"""Differentiable planar contact simulation for information-driven system identification."""

import jax

jax.config.update("jax_enable_x64", True)

from contactid.errors import (  # noqa: E402
    ConfigurationError,
    DivergenceError,
    DomainError,
    EvaluationError,
)

__all__ = [
    "ConfigurationError",
    "DivergenceError",
    "DomainError",
    "EvaluationError",
]
__version__ = "0.1.0"
