"""Exception hierarchy. Each error carries the category prefix the CLI prints."""

from typing import Optional

import numpy as np


class FmapsError(Exception):
    """Base class for all toolkit errors."""
    category = "E_INTERNAL"


class ParseError(FmapsError):
    category = "E_PARSE"


class EmptyMesh(FmapsError):
    category = "E_EMPTY"


class DegenerateGeometry(FmapsError):
    category = "E_GEOMETRY"


class DisconnectedMesh(FmapsError):
    """Some vertices are unreachable; `distances` holds +inf there."""
    category = "E_DISCONNECTED"

    def __init__(self, message: str, distances: Optional[np.ndarray] = None):
        super().__init__(message)
        self.distances = distances


class ConvergenceFailure(FmapsError):
    category = "E_CONVERGE"


class BasisTooLarge(FmapsError):
    category = "E_BASIS"


class DimensionMismatch(FmapsError):
    category = "E_DIM"


class NonFiniteInput(FmapsError):
    category = "E_NONFINITE"


class SingularSystem(FmapsError):
    category = "E_SINGULAR"


class ConfigError(FmapsError):
    category = "E_CONFIG"


class InsufficientSpectrum(FmapsError):
    category = "E_SPECTRUM"


class ZeroColumn(FmapsError):
    category = "E_ZERO_COLUMN"


class NonFiniteLoss(FmapsError):
    """Optimization diverged; `history` holds the records up to the failure."""
    category = "E_DIVERGED"

    def __init__(self, message: str, history: Optional[list] = None):
        super().__init__(message)
        self.history = history or []


class OutOfBudget(FmapsError):
    category = "E_BUDGET"
