"""Forecast a sensor's equilibrium response, with uncertainty, from a short prefix."""
from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
