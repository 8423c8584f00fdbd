"""Convergence-rate experiments over a sweep of noise levels.

For every noise level the pipeline builds exact-norm noisy data, picks
``alpha`` (discrepancy principle or index-function rule), solves, measures
the error against the known phantom and certifies the four inequalities:

``penalty_gap``
    ``J(phi_alpha) - J(phi_true) <= delta^2 / (2 alpha)``; any alpha.
``mdp_data_error``
    ``||T phi_alpha - T phi_true|| <= (tau_high + 1) delta``; MDP, in band.
``bregman_upper``
    ``D_J(phi_alpha, phi_true) <= (3/2 + tau_high) delta^2 / alpha``; MDP, in band.
``index_data_error``
    ``||T phi_alpha - T phi_true|| <= delta sqrt(6 + 2 tau_high)``; index rule
    with ``||T phi_alpha - f|| <= tau_high delta``.

Checks whose hypotheses do not hold are reported as ``skipped``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bregman import bregman, bregman_sym
from .forward_ops import ForwardOperator, Measurement
from .grid import Field, Grid, norm_l2
from .mdp import (
    IndexFunction,
    MdpConfig,
    MdpError,
    TracePoint,
    alpha_lower_bound,
    choose_alpha_mdp,
    discrepancy,
    phi_index,
)
from .smoothed_tv import SmoothedTvPenalty
from .solver import LineSearchError, SolveConfig, minimize, optimality_residual

__all__ = [
    "PHANTOMS",
    "BOUND_NAMES",
    "NoiseModel",
    "BoundCheck",
    "RateRecord",
    "RateReport",
    "ExperimentError",
    "FitError",
    "make_phantom",
    "add_noise",
    "certify_bounds",
    "fit_index",
    "run_experiment",
    "run_level",
]

log = logging.getLogger(__name__)

PHANTOMS = ("constant", "ramp", "bump", "piecewise")
BOUND_NAMES = ("penalty_gap", "mdp_data_error", "bregman_upper", "index_data_error")
FIT_TARGETS = ("bregman_dist", "j_gap", "l2_error")
SLACK = 1e-6


class ExperimentError(RuntimeError):
    """A noise level failed; ``partial`` holds the records completed before it."""

    def __init__(self, message: str, partial: Optional["RateReport"] = None):
        super().__init__(message)
        self.partial = partial


class FitError(ValueError):
    pass


# ---------------------------------------------------------------- phantoms

def make_phantom(kind: str, grid: Grid, amplitude: float = 1.0) -> Field:
    """Closed-form ground truth on ``grid``.

    ``constant`` is ``amplitude`` everywhere; ``ramp`` is the mean of the cell
    coordinates; ``bump`` is a Gaussian centred in the domain with width
    0.15 of the shortest side; ``piecewise`` has a single jump (a half-domain
    step in 1D, a disc of radius 0.3 of the shortest side in 2D).
    """
    coords = grid.coordinates()
    lengths = [n * h for n, h in zip(grid.dims, grid.spacing)]
    if kind == "constant":
        values = np.ones(grid.shape)
    elif kind == "ramp":
        values = sum(coords) / grid.ndim
    elif kind == "bump":
        width = 0.15 * min(lengths)
        r2 = sum((x - L / 2) ** 2 for x, L in zip(coords, lengths))
        values = np.exp(-r2 / (2 * width * width))
    elif kind == "piecewise":
        if grid.ndim == 1:
            values = (coords[0] >= lengths[0] / 2).astype(float)
        else:
            r2 = sum((x - L / 2) ** 2 for x, L in zip(coords, lengths))
            values = (r2 < (0.3 * min(lengths)) ** 2).astype(float)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}; expected one of {PHANTOMS}")
    return Field(grid, amplitude * values)


# ------------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseModel:
    """Gaussian direction scaled to an exact norm ``delta``."""

    delta: float
    seed: int = 0
    kind: str = "gaussian-normalized"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"noise level delta must be positive, got {self.delta}")
        if self.kind != "gaussian-normalized":
            raise ValueError(f"unsupported noise kind {self.kind!r}")


def add_noise(f_true: Measurement, nm: NoiseModel) -> Measurement:
    """``f_true + delta * e / ||e||`` with ``e`` drawn from ``nm.seed``."""
    seed = nm.seed
    while True:
        e = np.random.default_rng(seed).standard_normal(f_true.values.size)
        norm = math.sqrt(f_true.weight * float(np.vdot(e, e)))
        if norm > 0:
            break
        seed += 1
    return Measurement(f_true.values + (nm.delta / norm) * e, f_true.weight)


# ------------------------------------------------------------------ bounds

@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    status: str  # "satisfied", "violated" or "skipped"

    @property
    def satisfied(self) -> Optional[bool]:
        return None if self.status == "skipped" else self.status == "satisfied"


def _check(name: str, lhs: float, rhs: float, applicable: bool) -> BoundCheck:
    if not applicable:
        return BoundCheck(name, lhs, rhs, "skipped")
    ok = lhs <= rhs + SLACK * max(1.0, rhs)
    return BoundCheck(name, lhs, rhs, "satisfied" if ok else "violated")


def certify_bounds(*, delta: float, alpha: float, tau_high: float, strategy: str,
                   in_band: bool, j_gap: float, data_error: float,
                   bregman_dist: float) -> tuple[BoundCheck, ...]:
    """Evaluate the four certified inequalities for one noise level.

    Every check gets additive slack ``1e-6 * max(1, rhs)``.
    """
    mdp_ok = strategy == "mdp" and in_band
    index_ok = strategy == "index" and in_band
    return (
        _check("penalty_gap", j_gap, delta * delta / (2 * alpha), True),
        _check("mdp_data_error", data_error, (tau_high + 1) * delta, mdp_ok),
        _check("bregman_upper", bregman_dist, (1.5 + tau_high) * delta * delta / alpha, mdp_ok),
        _check("index_data_error", data_error, delta * math.sqrt(6 + 2 * tau_high), index_ok),
    )


# ----------------------------------------------------------------- records

@dataclass(frozen=True)
class RateRecord:
    delta: float
    alpha: float
    strategy: str
    discrepancy: float
    data_error: float
    j_gap: float
    bregman_dist: float
    bregman_sym: float
    l2_error: float
    bound_checks: tuple[BoundCheck, ...]
    in_band: bool = False
    solves_used: int = 1
    iterations: int = 0
    optimality_residual: float = 0.0
    psi: Optional[float] = None
    alpha_lower_bound: Optional[float] = None
    trace: tuple[TracePoint, ...] = ()

    def check(self, name: str) -> BoundCheck:
        return next(c for c in self.bound_checks if c.name == name)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["bound_checks"] = [asdict(c) for c in self.bound_checks]
        out["trace"] = [asdict(t) for t in self.trace]
        return out


@dataclass(frozen=True)
class RateReport:
    records: tuple[RateRecord, ...]
    fitted_kappa: Optional[float]
    fitted_C: Optional[float]
    fit_target: str
    config: dict = field(default_factory=dict)
    # constant of the O(Psi(delta)) Bregman bound under the MDP lower bound on alpha
    psi_bound_constant: Optional[float] = None

    @property
    def violations(self) -> list[tuple[float, str]]:
        return [(r.delta, c.name) for r in self.records for c in r.bound_checks
                if c.status == "violated"]

    @property
    def all_satisfied(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "fitted_kappa": self.fitted_kappa,
            "fitted_C": self.fitted_C,
            "fit_target": self.fit_target,
            "psi_bound_constant": self.psi_bound_constant,
            "all_satisfied": self.all_satisfied,
            "config": self.config,
        }


def fit_index(records: Sequence[RateRecord], target: str = "bregman_dist") -> tuple[float, float]:
    """Least-squares power law ``target ~ C * delta**kappa`` on log-log axes."""
    if target not in FIT_TARGETS:
        raise ValueError(f"unknown fit target {target!r}; expected one of {FIT_TARGETS}")
    pts = [(r.delta, getattr(r, target)) for r in records if getattr(r, target) > 0]
    if len(pts) < 3:
        raise FitError(f"need at least 3 records with positive {target}, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    kappa, logc = np.polyfit(x, y, 1)
    return float(kappa), float(math.exp(logc))


def psi_bound_constant(tau_low: float, tau_high: float) -> Optional[float]:
    """``4 (tau_low^2 + 1)(3/2 + tau_high) / ((tau_low - 1)^3 (tau_low + 1))``."""
    if tau_low <= 1:
        return None
    return 4 * (tau_low ** 2 + 1) * (1.5 + tau_high) / ((tau_low - 1) ** 3 * (tau_low + 1))


# -------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class LevelSetup:
    """Everything one noise level needs; picklable for worker processes."""

    op: ForwardOperator
    phantom: Field
    penalty: SmoothedTvPenalty
    delta: float
    seed: int
    strategy: str
    tau_low: float
    tau_high: float
    alpha_bracket: tuple[float, float]
    max_solves: int
    solve_cfg: SolveConfig
    psi: Optional[IndexFunction] = None


def run_level(s: LevelSetup) -> RateRecord:
    """Run one noise level end to end and certify its bounds."""
    op, p = s.op, s.penalty
    f_true = op.measurement(op.forward_array(s.phantom.values))
    f = add_noise(f_true, NoiseModel(s.delta, s.seed))
    if s.strategy == "mdp":
        mcfg = MdpConfig(s.delta, s.tau_low, s.tau_high, s.alpha_bracket, s.max_solves, s.solve_cfg)
        res = choose_alpha_mdp(op, f, p, mcfg)
        sol, disc, in_band, solves, trace = (res.solution, res.discrepancy, res.in_band,
                                             res.solves_used, res.trace)
    elif s.strategy == "index":
        if s.psi is None:
            raise ValueError("index strategy needs an index function")
        sol = minimize(op, f, phi_index(s.delta, s.psi), p, s.solve_cfg)
        disc = discrepancy(op, sol.phi, f)
        # membership in the upper discrepancy set is what the index-rule bound needs
        in_band = disc <= s.tau_high * s.delta
        solves, trace = 1, ()
    else:
        raise ValueError(f"unknown strategy {s.strategy!r}")

    phi, phi_true = sol.phi, s.phantom
    data_error = discrepancy(op, phi, f_true)
    j_gap = p.value(phi) - p.value(phi_true)
    d_j = bregman(p, phi, phi_true)
    d_sym = bregman_sym(p, phi, phi_true)
    checks = certify_bounds(delta=s.delta, alpha=sol.alpha, tau_high=s.tau_high,
                            strategy=s.strategy, in_band=in_band, j_gap=j_gap,
                            data_error=data_error, bregman_dist=d_j)
    psi_val = s.psi(s.delta) if s.psi is not None else None
    lower = alpha_lower_bound(s.delta, s.tau_low, s.psi) if s.psi is not None else None
    return RateRecord(
        delta=s.delta, alpha=sol.alpha, strategy=s.strategy, discrepancy=disc,
        data_error=data_error, j_gap=j_gap, bregman_dist=d_j, bregman_sym=d_sym,
        l2_error=norm_l2(phi - phi_true), bound_checks=checks, in_band=in_band,
        solves_used=solves, iterations=sol.iterations,
        optimality_residual=optimality_residual(op, f, sol, p),
        psi=psi_val, alpha_lower_bound=lower, trace=trace,
    )


def _run_indexed(args):
    i, setup = args
    return i, run_level(setup)


def run_experiment(cfg) -> RateReport:
    """Run the sweep described by ``cfg`` (a :class:`tvrates.config.ExperimentConfig`).

    Levels are processed in the order of ``cfg.deltas`` (descending); level
    ``i`` draws its noise from seed ``cfg.seed + i``.
    """
    op = cfg.build_operator()
    phantom = make_phantom(cfg.phantom.kind, op.domain_grid, cfg.phantom.amplitude)
    penalty = SmoothedTvPenalty(cfg.beta)
    psi = cfg.build_index_function()
    solve_cfg = cfg.build_solve_config()
    setups = [
        LevelSetup(op, phantom, penalty, d, cfg.seed + i, cfg.strategy, cfg.tau_low,
                   cfg.tau_high, tuple(cfg.alpha_bracket), cfg.max_solves, solve_cfg, psi)
        for i, d in enumerate(cfg.deltas)
    ]
    echo = cfg.echo()
    records: list[RateRecord] = []

    def partial() -> RateReport:
        return RateReport(tuple(records), None, None, cfg.fit_target, echo)

    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                done = dict(pool.map(_run_indexed, enumerate(setups)))
            records.extend(done[i] for i in range(len(setups)))
        else:
            for s in setups:
                log.info("delta=%g: solving (%s)", s.delta, s.strategy)
                records.append(run_level(s))
    except (MdpError, LineSearchError, ValueError) as exc:
        failed = cfg.deltas[len(records)] if len(records) < len(cfg.deltas) else None
        raise ExperimentError(f"delta={failed}: {exc}", partial()) from exc

    records.sort(key=lambda r: -r.delta)
    try:
        kappa, C = fit_index(records, cfg.fit_target)
    except FitError as exc:
        log.warning("no power-law fit: %s", exc)
        kappa = C = None
    return RateReport(tuple(records), kappa, C, cfg.fit_target, echo,
                      psi_bound_constant(cfg.tau_low, cfg.tau_high))
