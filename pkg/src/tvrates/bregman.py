"""Bregman distances of smooth convex functionals and a segment-wise
strong-convexity certificate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .grid import Field, _check_same_grid, inner

__all__ = [
    "SmoothFunctional",
    "QuadraticFunctional",
    "ConvexityCertificate",
    "bregman",
    "bregman_sym",
    "bregman_sym_inner",
    "strong_convexity_certificate",
    "directional_derivative_error",
]


@runtime_checkable
class SmoothFunctional(Protocol):
    """Anything with ``value`` and ``gradient``; ``hessian_vec`` is optional."""

    def value(self, phi: Field) -> float: ...

    def gradient(self, phi: Field) -> Field: ...


@dataclass(frozen=True)
class QuadraticFunctional:
    """``P(u) = scale/2 * ||u||^2`` in the weighted L2 norm."""

    scale: float = 1.0

    def value(self, phi: Field) -> float:
        return 0.5 * self.scale * inner(phi, phi)

    def gradient(self, phi: Field) -> Field:
        return phi * self.scale

    def value_difference(self, phi: Field, step: Field) -> float:
        return self.scale * (inner(phi, step) + 0.5 * inner(step, step))

    def hessian_vec(self, phi: Field, direction: Field) -> Field:
        return direction * self.scale


def bregman(P: SmoothFunctional, u: Field, v: Field) -> float:
    """``D_P(u, v) = P(u) - P(v) - <grad P(v), u - v>``."""
    _check_same_grid(u.grid, v.grid)
    return P.value(u) - P.value(v) - inner(P.gradient(v), u - v)


def bregman_sym(P: SmoothFunctional, u: Field, v: Field) -> float:
    """Symmetric Bregman distance ``D_P(u, v) + D_P(v, u)``."""
    return bregman(P, u, v) + bregman(P, v, u)


def bregman_sym_inner(P: SmoothFunctional, u: Field, v: Field) -> float:
    """Symmetric Bregman distance in its inner-product form
    ``<grad P(u) - grad P(v), u - v>``."""
    _check_same_grid(u.grid, v.grid)
    return inner(P.gradient(u) - P.gradient(v), u - v)


@dataclass(frozen=True)
class ConvexityCertificate:
    """Outcome of :func:`strong_convexity_certificate`.

    ``modulus`` is the certified ``c`` in ``D_P(u, v) >= c ||u - v||^2``;
    ``degenerate`` marks ``u == v``, for which ``modulus`` is reported as 0.
    """

    modulus: float
    degenerate: bool
    bregman: float
    distance_sq: float

    @property
    def slack(self) -> float:
        return self.bregman - self.modulus * self.distance_sq

    def holds(self, tol: float = 1e-8) -> bool:
        scale = max(1.0, abs(self.bregman), self.modulus * self.distance_sq)
        return self.slack >= -tol * scale


def strong_convexity_certificate(P, u: Field, v: Field, samples: int = 9) -> ConvexityCertificate:
    """Largest modulus ``c`` seen along the segment from ``v`` to ``u``.

    ``c = 1/2 * min_t <d, H(v + t d) d> / ||d||^2`` over ``samples`` equally
    spaced ``t`` in ``[0, 1]``, with ``d = u - v``.
    """
    if samples < 2:
        raise ValueError("samples must be at least 2")
    if not hasattr(P, "hessian_vec"):
        raise TypeError("functional must expose hessian_vec")
    _check_same_grid(u.grid, v.grid)
    d = u - v
    dist_sq = inner(d, d)
    D = bregman(P, u, v)
    if dist_sq == 0.0:
        return ConvexityCertificate(0.0, True, D, 0.0)
    quotients = [inner(d, P.hessian_vec(v + d * t, d)) / dist_sq
                 for t in np.linspace(0.0, 1.0, samples)]
    c = max(0.5 * min(quotients), 0.0)
    return ConvexityCertificate(c, False, D, dist_sq)


def directional_derivative_error(P: SmoothFunctional, phi: Field, direction: Field,
                                 eps: float = 1e-5) -> float:
    """Relative gap between ``<grad P(phi), direction>`` and a central difference."""
    analytic = inner(P.gradient(phi), direction)
    numeric = (P.value(phi + direction * eps) - P.value(phi - direction * eps)) / (2 * eps)
    return abs(analytic - numeric) / max(abs(numeric), abs(analytic), np.finfo(float).tiny)
