"""Regular 1D/2D grids, cell-centred fields and the discrete gradient pair.

Fields live on a regular grid with one value per cell. The gradient is the
forward difference along each axis with a zero component in the last cell
(zero flux), and ``divergence`` is its exact negative adjoint with respect
to the cell-volume weighted inner products::

    <gradient(u), v> = -<u, divergence(v)>

Both products carry the same cell-volume weight, so ``divergence`` is the
plain (unweighted) negative transpose of the forward-difference stencil.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "VectorField",
    "GridMismatchError",
    "gradient",
    "divergence",
    "inner",
    "norm_l2",
    "vector_inner",
    "vector_norm_l2",
    "write_field_csv",
    "read_field_csv",
]


class GridMismatchError(ValueError):
    """Raised when two objects are discretized on incompatible grids."""


@dataclass(frozen=True)
class Grid:
    """A regular grid with ``dims`` cells and per-axis ``spacing``.

    Parameters
    ----------
    dims : sequence of int
        Number of cells per axis, one or two entries, each at least 2.
    spacing : sequence of float, optional
        Cell width per axis. Defaults to ``1 / dims[k]`` so the domain is the
        unit interval or unit square.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (1, 2):
            raise ValueError(f"grid must be 1D or 2D, got {len(dims)} axes")
        if any(d < 2 for d in dims):
            raise ValueError(f"every grid dimension must be >= 2, got {dims}")
        spacing = tuple(float(s) for s in self.spacing) or tuple(1.0 / d for d in dims)
        if len(spacing) != len(dims):
            raise ValueError("spacing must have one entry per axis")
        if not all(math.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"every spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.dims

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def measure(self) -> float:
        """Total measure ``|Omega|`` of the domain."""
        return self.cell_volume * self.size

    def coordinates(self) -> list[np.ndarray]:
        """Per-axis coordinate arrays ``x_k = i * spacing_k``, broadcast to ``shape``."""
        axes = [np.arange(n) * h for n, h in zip(self.dims, self.spacing)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def constant(self, value: float) -> "Field":
        return Field(self, np.full(self.shape, float(value)))


def _as_grid_array(grid: Grid, values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.size != grid.size:
        raise ValueError(f"expected {grid.size} values for grid {grid.dims}, got {arr.size}")
    arr = arr.reshape(grid.shape)
    if not np.isfinite(arr).all():
        raise ValueError("field values must be finite")
    arr.setflags(write=False)
    return arr


class Field:
    """A scalar function on a grid, one finite value per cell.

    Values are stored with the grid's shape and are read-only. Arithmetic
    with other fields on the same grid and with scalars returns new fields.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        self.grid = grid
        self.values = _as_grid_array(grid, values)

    def __repr__(self):
        return f"Field(dims={self.grid.dims}, spacing={self.grid.spacing})"

    def _other(self, other) -> Union[np.ndarray, float]:
        if isinstance(other, Field):
            _check_same_grid(self.grid, other.grid)
            return other.values
        return float(other)

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, scalar):
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Field(self.grid, self.values / float(scalar))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def flat(self) -> np.ndarray:
        """Row-major copy of the values as a 1-D array."""
        return self.values.ravel().copy()


class VectorField:
    """One component array per grid axis, each with the grid's shape."""

    __slots__ = ("grid", "components")

    def __init__(self, grid: Grid, components: Sequence):
        if len(components) != grid.ndim:
            raise ValueError(
                f"vector field on a {grid.ndim}D grid needs {grid.ndim} components, "
                f"got {len(components)}"
            )
        self.grid = grid
        self.components = tuple(_as_grid_array(grid, c) for c in components)

    def __repr__(self):
        return f"VectorField(dims={self.grid.dims})"


def _check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatchError(f"incompatible discretizations: {a} vs {b}")


# Array-level kernels, shared with the solver hot loop.

def grad_arrays(u: np.ndarray, spacing: Sequence[float]) -> list[np.ndarray]:
    out = []
    for axis, h in enumerate(spacing):
        g = np.empty_like(u)
        if axis == 0:
            np.subtract(u[1:], u[:-1], out=g[:-1])
            g[:-1] /= h
            g[-1] = 0.0
        else:
            np.subtract(u[:, 1:], u[:, :-1], out=g[:, :-1])
            g[:, :-1] /= h
            g[:, -1] = 0.0
        out.append(g)
    return out


def div_array(components: Sequence[np.ndarray], spacing: Sequence[float]) -> np.ndarray:
    out = np.zeros_like(components[0])
    for axis, (v, h) in enumerate(zip(components, spacing)):
        lead = [slice(None)] * v.ndim
        lead[axis] = slice(None, -1)
        tail = [slice(None)] * v.ndim
        tail[axis] = slice(1, None)
        # last-cell component never enters: it is zero for every gradient
        flux = v[tuple(lead)] / h
        out[tuple(lead)] += flux
        out[tuple(tail)] -= flux
    return out


def gradient(f: Field) -> VectorField:
    """Forward-difference gradient with a zero last-cell component per axis."""
    return VectorField(f.grid, grad_arrays(f.values, f.grid.spacing))


def divergence(v: VectorField) -> Field:
    """Exact negative adjoint of :func:`gradient` under weighted inner products."""
    return Field(v.grid, div_array(v.components, v.grid.spacing))


def inner(a: Field, b: Field) -> float:
    _check_same_grid(a.grid, b.grid)
    return a.grid.cell_volume * float(np.vdot(a.values, b.values))


def norm_l2(a: Field) -> float:
    return math.sqrt(max(inner(a, a), 0.0))


def vector_inner(a: VectorField, b: VectorField) -> float:
    _check_same_grid(a.grid, b.grid)
    total = sum(float(np.vdot(x, y)) for x, y in zip(a.components, b.components))
    return a.grid.cell_volume * total


def vector_norm_l2(a: VectorField) -> float:
    return math.sqrt(max(vector_inner(a, a), 0.0))


def write_field_csv(path, f: Field) -> None:
    """Write ``f`` as a flat row-major CSV with ``dims``/``spacing`` header rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dims", *f.grid.dims])
        writer.writerow(["spacing", *(repr(s) for s in f.grid.spacing)])
        writer.writerow(["value"])
        for x in f.values.ravel():
            writer.writerow([repr(float(x))])


def read_field_csv(path) -> Field:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3 or rows[0][0] != "dims" or rows[1][0] != "spacing":
        raise ValueError(f"{path}: expected 'dims' and 'spacing' header rows")
    grid = Grid(tuple(int(d) for d in rows[0][1:]), tuple(float(s) for s in rows[1][1:]))
    values = [float(r[0]) for r in rows[3:] if r]
    return Field(grid, values)
