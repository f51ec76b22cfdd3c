"""Uniform tensor grids on boxes in one or two dimensions.

Only interior nodes carry unknowns; the homogeneous Dirichlet value on the
boundary is implicit.  The discrete L2 pairing is the node-wise rectangle
rule ``sum(f * g) * prod(h)``, which is the quadrature the finite-difference
operators in :mod:`nashpde.pde` are consistent with.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla


class GridMismatchError(ValueError):
    """Raised when grid functions defined on different grids are combined."""


@dataclass(frozen=True)
class Grid:
    extents: tuple[tuple[float, float], ...]
    points_per_axis: tuple[int, ...]

    def __post_init__(self):
        extents = tuple((float(a), float(b)) for a, b in self.extents)
        points = tuple(int(p) for p in self.points_per_axis)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "points_per_axis", points)
        if len(extents) not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {len(extents)}")
        if len(points) != len(extents):
            raise ValueError("points_per_axis must have one entry per axis")
        for (a, b), p in zip(extents, points):
            if p < 3:
                raise ValueError(f"points_per_axis must be >= 3, got {p}")
            if not b > a:
                raise ValueError(f"empty extent [{a}, {b}]")

    @classmethod
    def uniform(cls, dim: int, points: int, lower: float = 0.0, upper: float = 1.0) -> "Grid":
        return cls(((lower, upper),) * dim, (points,) * dim)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (p - 1) for (a, b), p in zip(self.extents, self.points_per_axis))

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return tuple(p - 2 for p in self.points_per_axis)

    @property
    def size(self) -> int:
        return int(np.prod(self.interior_shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_nodes(self, axis: int) -> np.ndarray:
        a, b = self.extents[axis]
        return np.linspace(a, b, self.points_per_axis[axis])[1:-1]

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Interior node coordinates, flattened in C order (last axis fastest)."""
        axes = [self.axis_nodes(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return tuple(m.ravel() for m in mesh)

    def sample(self, func: Callable[..., np.ndarray] | float) -> "GridFunction":
        """Evaluate ``func(x1[, x2])`` (or a constant) at the interior nodes."""
        if callable(func):
            values = np.broadcast_to(np.asarray(func(*self.coordinates()), dtype=float), (self.size,))
        else:
            values = np.full(self.size, float(func))
        return GridFunction(self, values)

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.size))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar field on the interior nodes of a grid (immutable)."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if values.shape != (self.grid.size,):
            raise GridMismatchError(
                f"expected {self.grid.size} interior values, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise GridMismatchError("grid functions live on different grids")
            return other.values
        return float(other)

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFunction(self.grid, self.values / self._other(other))

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _check_same_grid(f: GridFunction, g: GridFunction) -> None:
    if f.grid != g.grid:
        raise GridMismatchError("grid functions live on different grids")


def inner_product(f: GridFunction, g: GridFunction) -> float:
    """Rectangle-rule approximation of the L2(Omega) pairing."""
    _check_same_grid(f, g)
    return float(np.dot(f.values, g.values)) * f.grid.cell_volume


def l2_norm(f: GridFunction) -> float:
    # scaled BLAS nrm2 avoids underflow of the squares
    return float(np.sqrt(f.grid.cell_volume) * sla.norm(f.values)) if f.values.size else 0.0


def convergence_orders(errors: Sequence[float]) -> np.ndarray:
    """Observed orders log2(e_i / e_{i+1}) for a sequence of halved mesh widths."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])
