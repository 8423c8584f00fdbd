"""Smoothed-TV Tikhonov regularization with discrepancy-principle parameter
choice and numerical certification of convergence-rate bounds."""
from .bregman import (
    ConvexityCertificate,
    QuadraticFunctional,
    SmoothFunctional,
    bregman,
    bregman_sym,
    bregman_sym_inner,
    strong_convexity_certificate,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import (
    BoundCheck,
    NoiseModel,
    RateRecord,
    RateReport,
    add_noise,
    certify_bounds,
    fit_index,
    make_phantom,
    run_experiment,
)
from .forward_ops import (
    BlurOperator,
    ForwardOperator,
    IdentityOperator,
    MatrixOperator,
    Measurement,
    adjoint,
    apply,
    operator_norm,
)
from .grid import Field, Grid, VectorField, divergence, gradient, inner, norm_l2
from .mdp import (
    IndexFunction,
    MdpConfig,
    MdpResult,
    alpha_lower_bound,
    choose_alpha_mdp,
    discrepancy,
    phi_index,
)
from .smoothed_tv import SmoothedTvPenalty
from .solver import Solution, SolveConfig, minimize

__version__ = "0.1.0"
