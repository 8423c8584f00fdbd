"""Regularization-parameter choice.

Two rules are provided:

* Morozov's discrepancy principle: bisection on ``log(alpha)`` until the
  residual ``||T phi_alpha - f||`` lands in ``[tau_low * delta, tau_high * delta]``.
* The a-priori rule ``alpha = delta**2 / (2 * Psi(delta))`` for an index
  function ``Psi``.

The discrepancy is assumed nondecreasing in ``alpha``. That is checked on
every evaluated point, and a violation raises rather than bisecting on.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .forward_ops import ForwardOperator, Measurement, _check_domain, _check_range
from .grid import Field
from .solver import SolveConfig, Solution, minimize

__all__ = [
    "MdpConfig",
    "MdpResult",
    "TracePoint",
    "IndexFunction",
    "MdpError",
    "BracketError",
    "NonMonotoneError",
    "BudgetExhaustedError",
    "discrepancy",
    "choose_alpha_mdp",
    "phi_index",
    "alpha_lower_bound",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MdpConfig:
    delta: float
    tau_low: float = 1.1
    tau_high: float = 1.5
    alpha_bracket: tuple[float, float] = (1e-8, 1e4)
    max_solves: int = 60
    solve_cfg: SolveConfig = field(default_factory=SolveConfig)
    # allowed decrease of d(alpha) between increasing alphas, relative to delta
    monotone_tol: float = 1e-6

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 1.0 <= self.tau_low <= self.tau_high:
            raise ValueError(
                f"need 1 <= tau_low <= tau_high, got tau_low={self.tau_low}, "
                f"tau_high={self.tau_high}"
            )
        lo, hi = self.alpha_bracket
        if not 0 < lo < hi:
            raise ValueError(f"need 0 < alpha_min < alpha_max, got {self.alpha_bracket}")
        if self.max_solves < 2:
            raise ValueError("max_solves must be at least 2")
        object.__setattr__(self, "alpha_bracket", (float(lo), float(hi)))

    @property
    def band(self) -> tuple[float, float]:
        return self.tau_low * self.delta, self.tau_high * self.delta


@dataclass(frozen=True)
class TracePoint:
    alpha: float
    discrepancy: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class MdpResult:
    alpha: float
    discrepancy: float
    solves_used: int
    solution: Solution
    in_band: bool
    trace: tuple[TracePoint, ...] = ()


class MdpError(RuntimeError):
    """Base class; ``trace`` holds every evaluated ``(alpha, discrepancy)``."""

    def __init__(self, message: str, trace: Sequence[TracePoint] = ()):
        super().__init__(message)
        self.trace = tuple(trace)


class BracketError(MdpError):
    """The alpha bracket does not straddle the discrepancy band."""


class NonMonotoneError(MdpError):
    """Evaluated discrepancies decrease with alpha; solver too loose."""


class BudgetExhaustedError(MdpError):
    """``max_solves`` solves were used without landing in the band."""


@dataclass(frozen=True)
class IndexFunction:
    """An index function ``Psi``: continuous, increasing, ``Psi(0) = 0``.

    Either a power law ``C * delta**kappa`` or a piecewise-linear table of
    ``(delta, Psi)`` pairs starting at ``(0, 0)``.
    """

    C: float = 1.0
    kappa: float = 1.0
    table: Optional[tuple[tuple[float, float], ...]] = None
    concave: bool = False

    def __post_init__(self):
        if self.table is None:
            if not self.C > 0:
                raise ValueError("power-law constant C must be positive")
            if not 0 < self.kappa < 2:
                raise ValueError("power-law exponent kappa must lie in (0, 2)")
            if self.concave and self.kappa > 1:
                raise ValueError("a concave power law needs kappa <= 1")
            return
        pts = tuple((float(d), float(v)) for d, v in self.table)
        if len(pts) < 2 or pts[0] != (0.0, 0.0):
            raise ValueError("tabulated index function must start at (0, 0)")
        ds = np.array([p[0] for p in pts])
        vs = np.array([p[1] for p in pts])
        if (np.diff(ds) <= 0).any() or (np.diff(vs) <= 0).any():
            raise ValueError("tabulated index function must be strictly increasing")
        object.__setattr__(self, "table", pts)

    @classmethod
    def power_law(cls, C: float, kappa: float, concave: bool = False) -> "IndexFunction":
        return cls(C=C, kappa=kappa, concave=concave)

    @classmethod
    def tabulated(cls, pairs) -> "IndexFunction":
        return cls(table=tuple(pairs))

    def __call__(self, delta: float) -> float:
        if delta < 0:
            raise ValueError("index function is defined for delta >= 0")
        if self.table is None:
            return self.C * delta ** self.kappa
        ds, vs = zip(*self.table)
        if delta > ds[-1]:
            raise ValueError(f"delta={delta} beyond tabulated range {ds[-1]}")
        return float(np.interp(delta, ds, vs))

    def describe(self) -> dict:
        if self.table is None:
            return {"form": "power_law", "C": self.C, "kappa": self.kappa}
        return {"form": "tabulated", "table": [list(p) for p in self.table]}


def discrepancy(op: ForwardOperator, phi: Field, f: Measurement) -> float:
    """``||T phi - f||`` in the measurement norm."""
    _check_domain(op, phi)
    _check_range(f, op.range_dim, op.range_weight)
    r = op.forward_array(phi.values) - f.values
    return math.sqrt(op.range_weight * float(np.vdot(r, r)))


def _check_monotone(trace: list[TracePoint], tol: float) -> None:
    pts = sorted(trace, key=lambda p: p.alpha)
    for a, b in zip(pts, pts[1:]):
        if b.discrepancy < a.discrepancy - tol:
            raise NonMonotoneError(
                f"discrepancy decreases from {a.discrepancy:.6g} at alpha={a.alpha:.6g} "
                f"to {b.discrepancy:.6g} at alpha={b.alpha:.6g}; tighten the solver tolerance",
                trace,
            )


def choose_alpha_mdp(op: ForwardOperator, f: Measurement, p, cfg: MdpConfig) -> MdpResult:
    """Find ``alpha`` with ``tau_low*delta <= ||T phi_alpha - f|| <= tau_high*delta``.

    The bracket ends are solved first (``alpha_max`` then ``alpha_min``);
    afterwards the geometric midpoint of the current bracket is solved,
    warm-started from the previous solution. The first evaluated alpha
    whose discrepancy lies in the band is returned.
    """
    lo_band, hi_band = cfg.band
    tol = cfg.monotone_tol * cfg.delta
    trace: list[TracePoint] = []
    state = {"cfg": cfg.solve_cfg}

    def evaluate(alpha: float):
        if len(trace) >= cfg.max_solves:
            raise BudgetExhaustedError(
                f"no alpha in [{lo_band:.6g}, {hi_band:.6g}] after {len(trace)} solves", trace
            )
        sol = minimize(op, f, alpha, p, state["cfg"])
        state["cfg"] = cfg.solve_cfg.warm(sol.phi)
        d = discrepancy(op, sol.phi, f)
        trace.append(TracePoint(alpha, d, sol.iterations, sol.converged))
        log.debug("alpha=%.6g discrepancy=%.6g (%d iterations)", alpha, d, sol.iterations)
        _check_monotone(trace, tol)
        return sol, d

    def done(sol, d):
        return MdpResult(sol.alpha, d, len(trace), sol, True, tuple(trace))

    lo, hi = cfg.alpha_bracket
    sol, d = evaluate(hi)
    if lo_band <= d <= hi_band:
        return done(sol, d)
    if d < lo_band:
        raise BracketError(
            f"discrepancy {d:.6g} at alpha_max={hi:.6g} is below tau_low*delta={lo_band:.6g}; "
            "delta too large for the data or alpha_max too small",
            trace,
        )
    sol, d = evaluate(lo)
    if lo_band <= d <= hi_band:
        return done(sol, d)
    if d > hi_band:
        raise BracketError(
            f"discrepancy {d:.6g} at alpha_min={lo:.6g} exceeds tau_high*delta={hi_band:.6g}; "
            "delta too small for the data or alpha_min too large",
            trace,
        )
    while True:
        mid = math.sqrt(lo * hi)
        sol, d = evaluate(mid)
        if lo_band <= d <= hi_band:
            return done(sol, d)
        if d < lo_band:
            lo = mid
        else:
            hi = mid


def phi_index(delta: float, psi: IndexFunction) -> float:
    """The a-priori parameter ``delta**2 / (2 * Psi(delta))``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    value = psi(delta)
    if value <= 0:
        raise ValueError(f"Psi({delta}) = {value}; the ratio is degenerate")
    return delta * delta / (2.0 * value)


def alpha_lower_bound(delta: float, tau_low: float, psi: IndexFunction) -> float:
    """``1/2 (tau_low - 1)^2 (tau_low^2 - 1) / (tau_low^2 + 1) * phi_index(delta)``."""
    if tau_low < 1:
        raise ValueError("tau_low must be >= 1")
    t2 = tau_low * tau_low
    return 0.5 * (tau_low - 1.0) ** 2 * (t2 - 1.0) / (t2 + 1.0) * phi_index(delta, psi)
