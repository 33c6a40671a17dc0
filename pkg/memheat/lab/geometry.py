"""
geometry.py — 1D domain (0, L), uniform interior grid, Dirichlet Laplacian, discrete L² products.
"""
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import sparse

from memheat.core.errors import ConfigurationError, UsageError


class SpatialGrid(BaseModel):
    """Uniform grid on (0, L). Only interior nodes are stored; boundary values are zero."""
    model_config = ConfigDict(frozen=True)

    length: float
    n_interior: int

    @field_validator("length")
    @classmethod
    def _positive_length(cls, v: float) -> float:
        if not v > 0 or not np.isfinite(v):
            raise ValueError(f"domain length must be positive, got {v}")
        return v

    @field_validator("n_interior")
    @classmethod
    def _enough_nodes(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"need at least 2 interior nodes, got {v}")
        return v

    @property
    def h(self) -> float:
        return self.length / (self.n_interior + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_interior + 1)

    @property
    def laplacian_matrix(self) -> sparse.csr_matrix:
        """3-point stencil with zero ghost values at x=0 and x=L."""
        return _laplacian(self.length, self.n_interior)

    def sample(self, func) -> "Field":
        """Field of func evaluated at the interior nodes."""
        return Field(grid=self, values=np.asarray(func(self.nodes), dtype=float))

    def zeros(self) -> "Field":
        return Field(grid=self, values=np.zeros(self.n_interior))


class Field(BaseModel):
    """One real value per interior node of a grid."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: SpatialGrid
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=float)
        if arr.ndim != 1:
            raise ValueError(f"field values must be one-dimensional, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _matches_grid(self) -> "Field":
        if self.values.shape[0] != self.grid.n_interior:
            raise ValueError(
                f"field has {self.values.shape[0]} values for a grid of {self.grid.n_interior} nodes"
            )
        return self

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(grid=self.grid, values=self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(grid=self.grid, values=self.values - other.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(grid=self.grid, values=scalar * self.values)

    __rmul__ = __mul__


def build_grid(length: float, n_interior: int) -> SpatialGrid:
    if not (isinstance(length, (int, float)) and length > 0):
        raise ConfigurationError(f"domain length must be positive, got {length}")
    if int(n_interior) != n_interior or n_interior < 2:
        raise ConfigurationError(f"n_interior must be an integer >= 2, got {n_interior}")
    return SpatialGrid(length=float(length), n_interior=int(n_interior))


def apply_laplacian(f: Field) -> Field:
    return Field(grid=f.grid, values=f.grid.laplacian_matrix @ f.values)


def inner(f: Field, g: Field) -> float:
    _same_grid(f, g)
    return float(f.grid.h * np.dot(f.values, g.values))


def norm(f: Field) -> float:
    return float(np.sqrt(inner(f, f)))


def laplacian_eigenvalue(grid: SpatialGrid, k: int) -> float:
    """Exact eigenvalue of the discrete Laplacian for the mode sin(kπx/L)."""
    return -(4.0 / grid.h ** 2) * np.sin(k * np.pi * grid.h / (2.0 * grid.length)) ** 2


@lru_cache(maxsize=32)
def _laplacian(length: float, n: int) -> sparse.csr_matrix:
    h = length / (n + 1)
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    matrix = sparse.diags([off, main, off], [-1, 0, 1], format="csr") / h ** 2
    return matrix.tocsr()


def _same_grid(f: Field, g: Field) -> None:
    if f.grid != g.grid:
        raise UsageError(f"fields live on different grids: {f.grid} vs {g.grid}")
