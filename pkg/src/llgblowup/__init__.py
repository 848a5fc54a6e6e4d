"""Numerical toolkit for type-II blow-up of the Landau-Lifshitz-Gilbert
equation: bubble geometry, mode operators, non-local corrections, spectral
estimates, reduced dynamics and an equivariant blow-up simulator."""

from .geometry import PhysParams, BubbleParams

__all__ = ["PhysParams", "BubbleParams"]
__version__ = "0.1.0"
