"""Simulation and analysis toolkit for a Rydberg-excitation BEC apparatus."""

from .errors import DomainError, NumericalError

__version__ = "0.1.0"
__all__ = ["DomainError", "NumericalError", "__version__"]
