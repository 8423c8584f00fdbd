"""Linear forward operators with exact weighted adjoints.

Three kinds are provided: the identity, a separable convolution blur with
truncated and renormalized kernels at the edges, and an explicit dense
matrix. The measurement space carries its own scalar weight so that

    <T u, y>_range = range_weight * sum(T u * y)
    <u, x>_domain  = cell_volume  * sum(u * x)

and ``adjoint`` is the true adjoint with respect to those products.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid import Field, Grid, GridMismatchError

__all__ = [
    "Measurement",
    "ForwardOperator",
    "IdentityOperator",
    "BlurOperator",
    "MatrixOperator",
    "OperatorNormError",
    "apply",
    "adjoint",
    "operator_norm",
    "blur_matrix",
    "dense_matrix",
    "smallest_singular_value",
    "write_measurement_csv",
    "read_measurement_csv",
]

log = logging.getLogger(__name__)


class OperatorNormError(RuntimeError):
    """Power iteration did not settle; ``estimate`` holds the last value."""

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class Measurement:
    """Measured data: a flat vector of finite values with a scalar weight."""

    values: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).ravel()
        if not np.isfinite(arr).all():
            raise ValueError("measurement values must be finite")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError("measurement weight must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "weight", float(self.weight))

    def __len__(self):
        return self.values.size

    def __sub__(self, other: "Measurement") -> "Measurement":
        _check_range(self, other.values.size, other.weight)
        return Measurement(self.values - other.values, self.weight)

    def __add__(self, other: "Measurement") -> "Measurement":
        _check_range(self, other.values.size, other.weight)
        return Measurement(self.values + other.values, self.weight)

    def inner(self, other: "Measurement") -> float:
        _check_range(self, other.values.size, other.weight)
        return self.weight * float(np.vdot(self.values, other.values))

    def norm(self) -> float:
        return math.sqrt(self.inner(self))


def _check_range(y: Measurement, size: int, weight: float) -> None:
    if y.values.size != size:
        raise ValueError(f"measurement has {y.values.size} entries, expected {size}")
    if not math.isclose(y.weight, weight, rel_tol=1e-12):
        raise ValueError(f"measurement weight {y.weight} does not match {weight}")


class ForwardOperator:
    """Base class: a linear map from fields on ``domain_grid`` to measurements.

    Subclasses implement ``_forward`` and ``_transpose`` on raw arrays; the
    weight correction between domain and range lives here.
    """

    kind = "abstract"

    def __init__(self, domain_grid: Grid, range_dim: int, range_weight: Optional[float] = None):
        self.domain_grid = domain_grid
        self.range_dim = int(range_dim)
        self.range_weight = float(domain_grid.cell_volume if range_weight is None else range_weight)
        if self.range_dim < 1:
            raise ValueError("range_dim must be positive")
        if not self.range_weight > 0:
            raise ValueError("range_weight must be positive")

    def _forward(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _transpose(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # array-level entry points, used by the solver
    def forward_array(self, u: np.ndarray) -> np.ndarray:
        return self._forward(u).ravel()

    def adjoint_array(self, y: np.ndarray) -> np.ndarray:
        scale = self.range_weight / self.domain_grid.cell_volume
        out = self._transpose(np.asarray(y).ravel()).reshape(self.domain_grid.shape)
        return out * scale if scale != 1.0 else out

    def measurement(self, values) -> Measurement:
        return Measurement(values, self.range_weight)

    def describe(self) -> dict:
        return {"kind": self.kind}


class IdentityOperator(ForwardOperator):
    kind = "identity"

    def __init__(self, domain_grid: Grid):
        super().__init__(domain_grid, domain_grid.size)

    def _forward(self, u):
        return u.copy()

    def _transpose(self, y):
        return y.copy()


def blur_matrix(n: int, kernel: Sequence[float]) -> np.ndarray:
    """Dense 1D blur matrix; each row is the kernel truncated at the edges
    and renormalized to sum to one."""
    k = np.asarray(kernel, dtype=float)
    r = k.size // 2
    B = np.zeros((n, n))
    for i in range(n):
        lo, hi = max(0, i - r), min(n, i + r + 1)
        w = k[lo - i + r: hi - i + r]
        B[i, lo:hi] = w / w.sum()
    return B


class BlurOperator(ForwardOperator):
    """Separable convolution blur, the same 1D kernel along every axis."""

    kind = "blur"

    def __init__(self, domain_grid: Grid, kernel: Sequence[float]):
        k = np.asarray(kernel, dtype=float)
        if k.ndim != 1 or k.size % 2 == 0:
            raise ValueError("blur kernel must be a 1-D array of odd length")
        if (k < 0).any() or not math.isclose(k.sum(), 1.0, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("blur kernel weights must be nonnegative and sum to 1")
        if k[k.size // 2] <= 0:
            raise ValueError("blur kernel needs a positive centre weight")
        super().__init__(domain_grid, domain_grid.size)
        self.kernel = tuple(float(x) for x in k)
        self._mats = [blur_matrix(n, k) for n in domain_grid.dims]

    def _forward(self, u):
        if u.ndim == 1:
            return self._mats[0] @ u
        return self._mats[0] @ u @ self._mats[1].T

    def _transpose(self, y):
        y = y.reshape(self.domain_grid.shape)
        if y.ndim == 1:
            return self._mats[0].T @ y
        return self._mats[0].T @ y @ self._mats[1]

    def describe(self):
        return {"kind": self.kind, "kernel": list(self.kernel)}


class MatrixOperator(ForwardOperator):
    """Explicit dense matrix acting on the row-major flattened field."""

    kind = "matrix"

    def __init__(self, domain_grid: Grid, matrix, range_weight: Optional[float] = None):
        M = np.array(matrix, dtype=float)
        if M.ndim != 2 or M.shape[1] != domain_grid.size:
            raise ValueError(
                f"matrix must have shape (m, {domain_grid.size}), got {M.shape}"
            )
        if not np.isfinite(M).all():
            raise ValueError("matrix entries must be finite")
        super().__init__(domain_grid, M.shape[0], range_weight)
        M.setflags(write=False)
        self.matrix = M

    def _forward(self, u):
        return self.matrix @ u.ravel()

    def _transpose(self, y):
        return self.matrix.T @ y

    def describe(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist(), "range_weight": self.range_weight}


def _check_domain(op: ForwardOperator, u: Field) -> None:
    if u.grid != op.domain_grid:
        raise GridMismatchError(f"field grid {u.grid} does not match operator domain {op.domain_grid}")


def apply(op: ForwardOperator, u: Field) -> Measurement:
    _check_domain(op, u)
    return Measurement(op.forward_array(u.values), op.range_weight)


def adjoint(op: ForwardOperator, y: Measurement) -> Field:
    _check_range(y, op.range_dim, op.range_weight)
    return Field(op.domain_grid, op.adjoint_array(y.values))


def operator_norm(op: ForwardOperator, tol: float = 1e-10, max_iters: int = 100_000,
                  seed: int = 0) -> float:
    """Operator norm by power iteration on ``T*T`` from a seeded start vector.

    Returns the square root of the dominant eigenvalue once the relative
    change between successive eigenvalue estimates drops below ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    w = op.domain_grid.cell_volume
    x = np.random.default_rng(seed).standard_normal(op.domain_grid.shape)
    x /= math.sqrt(w * np.vdot(x, x))
    lam_old = math.inf
    lam = 0.0
    for it in range(1, max_iters + 1):
        z = op.adjoint_array(op.forward_array(x))
        lam = w * float(np.vdot(x, z))
        nz = math.sqrt(w * float(np.vdot(z, z)))
        if nz == 0.0:
            return 0.0
        x = z / nz
        if abs(lam - lam_old) <= tol * abs(lam):
            log.debug("power iteration settled after %d steps", it)
            return math.sqrt(max(lam, 0.0))
        lam_old = lam
    raise OperatorNormError(
        f"power iteration did not converge in {max_iters} steps", math.sqrt(max(lam, 0.0))
    )


def dense_matrix(op: ForwardOperator) -> np.ndarray:
    """Assemble the plain (unweighted) matrix of ``op`` column by column."""
    n = op.domain_grid.size
    M = np.empty((op.range_dim, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        M[:, j] = op.forward_array(e.reshape(op.domain_grid.shape))
        e[j] = 0.0
    return M


def smallest_singular_value(op: ForwardOperator, max_size: int = 4096) -> Optional[float]:
    """Injectivity diagnostic on small operators; warns below 1e-10.

    Returns ``None`` when the domain is larger than ``max_size`` cells.
    Singular values are those of the weighted operator.
    """
    if op.domain_grid.size > max_size:
        return None
    if isinstance(op, BlurOperator):
        per_axis = [np.linalg.svd(B, compute_uv=False) for B in op._mats]
        smin = float(np.prod([s.min() for s in per_axis]))
    else:
        smin = float(np.linalg.svd(dense_matrix(op), compute_uv=False).min())
        if op.range_dim < op.domain_grid.size:
            smin = 0.0
    smin *= math.sqrt(op.range_weight / op.domain_grid.cell_volume)
    if smin < 1e-10:
        warnings.warn(f"forward operator looks non-injective (smallest singular value {smin:.3g})")
    return smin


def write_measurement_csv(path, y: Measurement) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["weight", repr(y.weight)])
        writer.writerow(["value"])
        for v in y.values:
            writer.writerow([repr(float(v))])


def read_measurement_csv(path) -> Measurement:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][0] != "weight":
        raise ValueError(f"{path}: expected a 'weight' header row")
    return Measurement([float(r[0]) for r in rows[2:] if r], float(rows[0][1]))
