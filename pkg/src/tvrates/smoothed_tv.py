"""Smoothed total variation ``J(phi) = sum_cells vol * sqrt(|grad phi|^2 + beta)``.

The derivative is ``-div(grad phi / sqrt(|grad phi|^2 + beta))`` and the
Hessian acts as ``Phi -> -div(A(phi) grad Phi)`` with the per-cell tensor

    A = (I * (|g|^2 + beta) - g g^T) / (|g|^2 + beta)^(3/2),   g = grad phi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, _check_same_grid, div_array, grad_arrays

__all__ = ["SmoothedTvPenalty"]


@dataclass(frozen=True)
class SmoothedTvPenalty:
    """Smoothed TV penalty with fixed smoothing parameter ``0 < beta < 1``."""

    beta: float

    def __post_init__(self):
        b = float(self.beta)
        if not (0.0 < b < 1.0):
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        object.__setattr__(self, "beta", b)

    # ----------------------------------------------------------- arrays
    def _speed(self, g: list[np.ndarray]) -> np.ndarray:
        sq = g[0] * g[0]
        for c in g[1:]:
            sq = sq + c * c
        return np.sqrt(sq + self.beta)

    def value_array(self, phi: np.ndarray, spacing, cell_volume: float) -> float:
        return cell_volume * float(self._speed(grad_arrays(phi, spacing)).sum())

    def gradient_array(self, phi: np.ndarray, spacing) -> np.ndarray:
        g = grad_arrays(phi, spacing)
        s = self._speed(g)
        return -div_array([c / s for c in g], spacing)

    def difference_array(self, phi: np.ndarray, step: np.ndarray, spacing,
                         cell_volume: float) -> float:
        """``J(phi + step) - J(phi)`` without cancellation."""
        return self.segment_difference(phi, step, spacing, cell_volume)(1.0)

    def segment_difference(self, phi: np.ndarray, direction: np.ndarray, spacing,
                           cell_volume: float):
        """Return ``t -> J(phi + t * direction) - J(phi)``, evaluated stably.

        Uses ``sqrt(a + d) - sqrt(a) = d / (sqrt(a + d) + sqrt(a))`` per cell,
        so tiny line-search decreases stay resolvable near a minimizer.
        """
        g = grad_arrays(phi, spacing)
        d = grad_arrays(direction, spacing)
        s = self._speed(g)
        s2 = s * s
        lin = 2.0 * sum(gk * dk for gk, dk in zip(g, d))
        quad = sum(dk * dk for dk in d)

        def diff(t: float) -> float:
            delta = t * lin + (t * t) * quad
            s_new = np.sqrt(np.maximum(s2 + delta, self.beta))
            return cell_volume * float((delta / (s_new + s)).sum())

        return diff

    def hessian_vec_array(self, phi: np.ndarray, direction: np.ndarray, spacing) -> np.ndarray:
        g = grad_arrays(phi, spacing)
        d = grad_arrays(direction, spacing)
        s = self._speed(g)
        gd = sum(gk * dk for gk, dk in zip(g, d))
        s3 = s ** 3
        flux = [(dk * s * s - gk * gd) / s3 for gk, dk in zip(g, d)]
        return -div_array(flux, spacing)

    # ----------------------------------------------------------- fields
    def value(self, phi: Field) -> float:
        return self.value_array(phi.values, phi.grid.spacing, phi.grid.cell_volume)

    def gradient(self, phi: Field) -> Field:
        return Field(phi.grid, self.gradient_array(phi.values, phi.grid.spacing))

    def value_difference(self, phi: Field, step: Field) -> float:
        _check_same_grid(phi.grid, step.grid)
        return self.difference_array(phi.values, step.values, phi.grid.spacing,
                                     phi.grid.cell_volume)

    def hessian_vec(self, phi: Field, direction: Field) -> Field:
        _check_same_grid(phi.grid, direction.grid)
        return Field(phi.grid, self.hessian_vec_array(phi.values, direction.values,
                                                      phi.grid.spacing))

    def pointwise_modulus(self, phi: Field) -> np.ndarray:
        """Per-cell ``beta / (|grad phi|^2 + beta)^2``."""
        s2 = self._speed(grad_arrays(phi.values, phi.grid.spacing)) ** 2
        return self.beta / (s2 * s2)

    def modulus_lower_bound(self, phi: Field) -> float:
        """``l(phi)``: the minimum over cells of ``beta / (|grad phi|^2 + beta)^2``.

        The Hessian quadratic form is compared against ``l(phi) * |grad Phi|^2``.
        The per-cell bound that Cauchy-Schwarz actually yields is
        ``beta / (|grad phi|^2 + beta)^(3/2)``, so ``l(phi)`` is a valid lower
        bound exactly when ``max |grad phi|^2 + beta >= 1``; for flatter
        ``phi`` (constants included) it overshoots. See
        :meth:`sharp_modulus_lower_bound`.
        """
        return float(self.pointwise_modulus(phi).min())

    def sharp_modulus_lower_bound(self, phi: Field) -> float:
        """Minimum over cells of ``beta / (|grad phi|^2 + beta)^(3/2)``.

        Always a valid lower bound for the Hessian form against ``|grad Phi|^2``.
        """
        s = self._speed(grad_arrays(phi.values, phi.grid.spacing))
        return float((self.beta / s ** 3).min())

    def floor(self, measure: float) -> float:
        """The minimum value ``sqrt(beta) * |Omega|``, attained by constants."""
        return math.sqrt(self.beta) * measure
