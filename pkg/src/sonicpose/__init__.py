"""Simulation toolkit for acoustic IMU injection against visual-inertial pose tracking."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
