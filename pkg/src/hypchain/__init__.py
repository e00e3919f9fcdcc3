"""Simulation, spectral analysis, and controller synthesis for chains of
three boundary-coupled 2x2 hyperbolic systems reduced to scalar integral
difference equations."""

from .chainspec import (BoundaryQ, BoundaryRho, ChainSpec, Config, InputSignal,
                        SpatialProfile, counterexample_spec, seeded_spec)
from .errors import (AssumptionError, CompatibilityError, DesignError, GridError,
                     HypchainError, IdentificationError, NumericsError,
                     SpecValidationError)

__all__ = [
    "BoundaryQ", "BoundaryRho", "ChainSpec", "Config", "InputSignal",
    "SpatialProfile", "counterexample_spec", "seeded_spec",
    "AssumptionError", "CompatibilityError", "DesignError", "GridError",
    "HypchainError", "IdentificationError", "NumericsError",
    "SpecValidationError",
]

__version__ = "0.1.0"
