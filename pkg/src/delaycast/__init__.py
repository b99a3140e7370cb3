"""Delay-coordinate forecasting and reconstruction of chaotic dynamics."""

from .kernels import BACKEND
from .timeseries import TimeSeries

__version__ = "0.1.0"

__all__ = ["BACKEND", "TimeSeries", "__version__"]
