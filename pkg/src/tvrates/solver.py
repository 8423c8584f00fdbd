"""Minimization of ``F(phi) = 1/2 ||T phi - f||^2 + alpha * J(phi)``.

Gradient descent with Barzilai-Borwein step seeding and monotone Armijo
backtracking. Objective decreases are evaluated in a cancellation-free
form (``<r, T s> + 1/2 ||T s||^2 + alpha * (J(phi + s) - J(phi))``) so the
Armijo test keeps working once the decrease falls below the rounding level
of ``F`` itself.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .forward_ops import ForwardOperator, Measurement, _check_range, _check_domain
from .grid import Field

__all__ = [
    "SolveConfig",
    "Solution",
    "IterationInfo",
    "LineSearchError",
    "cost",
    "cost_gradient",
    "minimize",
    "optimality_residual",
    "variational_gap",
]

log = logging.getLogger(__name__)

InitialGuess = Union[str, Field]

# recompute T phi - f from scratch this often to stop incremental drift
_RESIDUAL_REFRESH = 50


@dataclass(frozen=True)
class SolveConfig:
    """Solver settings.

    ``initial_guess`` is ``"zeros"``, ``"adjoint"`` (``T* f``) or a
    :class:`Field` used as a warm start.
    """

    max_iters: int = 20000
    grad_tol: float = 1e-8
    c1: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    initial_guess: InitialGuess = "adjoint"
    barzilai_borwein: bool = True
    min_step: float = 1e-30

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.grad_tol < 1:
            raise ValueError("grad_tol must lie in (0, 1)")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if isinstance(self.initial_guess, str) and self.initial_guess not in ("zeros", "adjoint"):
            raise ValueError(f"unknown initial_guess {self.initial_guess!r}")

    def warm(self, phi: Field) -> "SolveConfig":
        return replace(self, initial_guess=phi)


@dataclass(frozen=True)
class Solution:
    phi: Field
    alpha: float
    iterations: int
    final_grad_norm: float
    objective: float
    initial_grad_norm: float
    converged: bool

    @property
    def relative_grad_norm(self) -> float:
        return self.final_grad_norm / max(1.0, self.initial_grad_norm)


class IterationInfo(NamedTuple):
    """Per accepted step; ``grad_norm_sq`` is taken at the start of the step."""

    iteration: int
    step: float
    decrease: float
    grad_norm_sq: float
    objective: float


class LineSearchError(RuntimeError):
    """Backtracking underflowed; ``best`` is the last accepted iterate."""

    def __init__(self, message: str, best: Solution):
        super().__init__(message)
        self.best = best


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return alpha


def cost(op: ForwardOperator, f: Measurement, phi: Field, alpha: float, p) -> float:
    """``1/2 ||T phi - f||^2 + alpha * J(phi)``."""
    alpha = _check_alpha(alpha)
    _check_domain(op, phi)
    _check_range(f, op.range_dim, op.range_weight)
    r = op.forward_array(phi.values) - f.values
    return 0.5 * op.range_weight * float(np.vdot(r, r)) + alpha * p.value(phi)


def cost_gradient(op: ForwardOperator, f: Measurement, phi: Field, alpha: float, p) -> Field:
    """``T*(T phi - f) + alpha * grad J(phi)``."""
    alpha = _check_alpha(alpha)
    _check_domain(op, phi)
    _check_range(f, op.range_dim, op.range_weight)
    r = op.forward_array(phi.values) - f.values
    return Field(phi.grid, op.adjoint_array(r) + alpha * p.gradient(phi).values)


def optimality_residual(op: ForwardOperator, f: Measurement, sol: Solution, p) -> float:
    """``|| T*(f - T phi) - alpha * grad J(phi) ||`` at the solution."""
    g = cost_gradient(op, f, sol.phi, sol.alpha, p)
    w = sol.phi.grid.cell_volume
    return math.sqrt(w * float(np.vdot(g.values, g.values)))


def _initial(op: ForwardOperator, f: Measurement, guess: InitialGuess) -> np.ndarray:
    if isinstance(guess, Field):
        _check_domain(op, guess)
        return np.array(guess.values)
    if guess == "zeros":
        return np.zeros(op.domain_grid.shape)
    return op.adjoint_array(f.values)


def _penalty_kernels(p, grid):
    """Array-level gradient and segment-difference factories for ``p``.

    The second callable maps ``(phi, d)`` to ``t -> J(phi + t d) - J(phi)``.
    """
    if hasattr(p, "gradient_array") and hasattr(p, "segment_difference"):
        h, w = grid.spacing, grid.cell_volume
        return (lambda x: p.gradient_array(x, h),
                lambda x, d: p.segment_difference(x, d, h, w))

    def grad(x):
        return p.gradient(Field(grid, x)).values

    def segment(x, d):
        base = Field(grid, x)
        if hasattr(p, "value_difference"):
            return lambda t: p.value_difference(base, Field(grid, t * d))
        v0 = p.value(base)
        return lambda t: p.value(Field(grid, x + t * d)) - v0

    return grad, segment


def minimize(op: ForwardOperator, f: Measurement, alpha: float, p,
             cfg: Optional[SolveConfig] = None,
             callback: Optional[Callable[[IterationInfo], None]] = None) -> Solution:
    """Minimize the Tikhonov functional for a fixed ``alpha``.

    Terminates once ``||grad F|| <= grad_tol * max(1, ||grad F(phi_0)||)``
    or after ``max_iters`` accepted steps (``converged=False``). Every
    accepted step satisfies the Armijo condition, so the objective is
    nonincreasing. Raises :class:`LineSearchError` if backtracking underflows.
    """
    cfg = cfg or SolveConfig()
    alpha = _check_alpha(alpha)
    _check_range(f, op.range_dim, op.range_weight)
    grid = op.domain_grid
    w_dom, w_rng = grid.cell_volume, op.range_weight
    penalty_grad, penalty_segment = _penalty_kernels(p, grid)

    phi = _initial(op, f, cfg.initial_guess)
    r = op.forward_array(phi) - f.values
    g = op.adjoint_array(r) + alpha * penalty_grad(phi)
    gn2 = w_dom * float(np.vdot(g, g))
    g0 = math.sqrt(gn2)
    target = cfg.grad_tol * max(1.0, g0)
    objective = 0.5 * w_rng * float(np.vdot(r, r)) + alpha * p.value(Field(grid, phi))
    step = cfg.initial_step

    def snapshot(it: int, converged: bool) -> Solution:
        field = Field(grid, phi)
        obj = 0.5 * w_rng * float(np.vdot(r, r)) + alpha * p.value(field)
        return Solution(field, alpha, it, math.sqrt(gn2), obj, g0, converged)

    it = 0
    while math.sqrt(gn2) > target:
        if it >= cfg.max_iters:
            log.info("budget of %d iterations exhausted (|g|=%.3e, target %.3e)",
                     cfg.max_iters, math.sqrt(gn2), target)
            return snapshot(it, False)
        d = -g
        Td = op.forward_array(d)
        rTd = float(np.vdot(r, Td))
        TdTd = float(np.vdot(Td, Td))
        penalty_diff = penalty_segment(phi, d)
        t = step
        while True:
            dec = w_rng * (t * rTd + 0.5 * t * t * TdTd) + alpha * penalty_diff(t)
            if dec <= -cfg.c1 * t * gn2:
                break
            t *= cfg.backtrack
            if t < cfg.min_step:
                raise LineSearchError(
                    f"step underflow at iteration {it} (|g|={math.sqrt(gn2):.3e})",
                    snapshot(it, False),
                )
        s = t * d
        phi = phi + s
        if (it + 1) % _RESIDUAL_REFRESH == 0:
            r = op.forward_array(phi) - f.values
        else:
            r = r + t * Td
        g_new = op.adjoint_array(r) + alpha * penalty_grad(phi)
        y = g_new - g
        g = g_new
        gn2_used, gn2 = gn2, w_dom * float(np.vdot(g, g))
        objective += dec
        it += 1
        if callback is not None:
            callback(IterationInfo(it, t, dec, gn2_used, objective))
        if cfg.barzilai_borwein:
            sy = float(np.vdot(s, y))
            step = float(np.vdot(s, s)) / sy if sy > 0 else t
        else:
            step = cfg.initial_step
    return snapshot(it, True)


def variational_gap(op: ForwardOperator, f: Measurement, sol: Solution, p, phi: Field) -> float:
    """``alpha <grad J(phi), phi_alpha - phi> - <T*(T phi - f), phi - phi_alpha>``.

    Nonpositive for every ``phi`` when ``sol.phi`` minimizes the functional;
    an inexact minimizer can push it above zero by about
    ``||grad F(phi_alpha)|| * ||phi - phi_alpha||``.
    """
    _check_domain(op, phi)
    w = phi.grid.cell_volume
    diff = sol.phi.values - phi.values
    r = op.forward_array(phi.values) - f.values
    lhs = sol.alpha * w * float(np.vdot(p.gradient(phi).values, diff))
    rhs = -w * float(np.vdot(op.adjoint_array(r), diff))
    return lhs - rhs
