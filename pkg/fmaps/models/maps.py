from dataclasses import dataclass
from typing import Optional
import enum

import numpy as np

from fmaps.models.errors import ConfigError, DimensionMismatch, NonFiniteInput

# Direction convention: pointwise maps go S2 -> S1 (n2 x n1 matrices),
# functional maps go from functions on S1 to functions on S2 (K2 x K1).


class Kernel(enum.Enum):
    GAUSSIAN_ROW_SOFTMAX = "gaussian_row_softmax"


class Provenance(enum.Enum):
    WKS = "wks"
    EXTERNAL = "external"


@dataclass(frozen=True)
class ScalableSoftMap:
    """Implicit row-stochastic map Pi (n2 x n1) with Pi_ij = softmax_j(-|F2_i - F1_j|^2 / 2 sigma^2).

    Only the two feature matrices are stored; Pi itself never exists in memory.
    """

    F1: np.ndarray
    F2: np.ndarray
    sigma: float
    kernel: Kernel = Kernel.GAUSSIAN_ROW_SOFTMAX

    def __post_init__(self):
        F1 = np.ascontiguousarray(self.F1, dtype=np.float64)
        F2 = np.ascontiguousarray(self.F2, dtype=np.float64)
        if F1.ndim != 2 or F2.ndim != 2:
            raise DimensionMismatch(f"feature matrices must be 2D, got {F1.shape} and {F2.shape}")
        if F1.shape[1] != F2.shape[1] or F1.shape[1] < 1:
            raise DimensionMismatch(f"feature widths differ: {F1.shape[1]} vs {F2.shape[1]}")
        if not (np.all(np.isfinite(F1)) and np.all(np.isfinite(F2))):
            raise NonFiniteInput("feature matrices contain non-finite entries")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "F1", F1)
        object.__setattr__(self, "F2", F2)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n1(self) -> int:
        return self.F1.shape[0]

    @property
    def n2(self) -> int:
        return self.F2.shape[0]

    @property
    def p(self) -> int:
        return self.F1.shape[1]


@dataclass(frozen=True)
class VertexMap:
    """Hard correspondence: indices[i] is the S1 vertex matched to S2 vertex i."""

    indices: np.ndarray
    n_source: Optional[int] = None

    def __post_init__(self):
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        if indices.ndim != 1:
            raise DimensionMismatch(f"vertex map must be 1D, got shape {indices.shape}")
        if indices.size and indices.min() < 0:
            raise DimensionMismatch("vertex map contains negative indices")
        if self.n_source is not None and indices.size and indices.max() >= self.n_source:
            raise DimensionMismatch(f"vertex map index {indices.max()} out of range [0, {self.n_source})")
        object.__setattr__(self, "indices", indices)

    @property
    def n2(self) -> int:
        return self.indices.shape[0]

    @classmethod
    def identity(cls, n: int) -> "VertexMap":
        return cls(np.arange(n), n_source=n)


@dataclass(frozen=True)
class FunctionalMap:
    """K2 x K1 matrix taking spectral coefficients on S1 to coefficients on S2."""

    C: np.ndarray
    source_id: str = ""
    target_id: str = ""

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        if C.ndim != 2 or min(C.shape) < 1:
            raise DimensionMismatch(f"functional map must be a non-empty matrix, got {C.shape}")
        if not np.all(np.isfinite(C)):
            raise NonFiniteInput("functional map has non-finite entries")
        object.__setattr__(self, "C", C)

    @property
    def k2(self) -> int:
        return self.C.shape[0]

    @property
    def k1(self) -> int:
        return self.C.shape[1]

    @property
    def shape(self) -> tuple:
        return self.C.shape


@dataclass(frozen=True)
class DescriptorSet:
    """q descriptor functions stored as columns of an (n, q) matrix."""

    values: np.ndarray
    provenance: Provenance = Provenance.EXTERNAL

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 1:
            raise DimensionMismatch(f"descriptors must be (n, q) with q >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("descriptors contain non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]
