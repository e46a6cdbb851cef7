"""Fuel-optimal multi-burn orbital transfers and their second-order optimality test."""

import jax

# Every derivative and determinant below needs double precision.
jax.config.update("jax_enable_x64", True)

from suffkit.units import EngineSpec, ScaleSet  # noqa: E402

__all__ = ["EngineSpec", "ScaleSet"]
__version__ = "0.1.0"
