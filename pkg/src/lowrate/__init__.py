"""Drift estimation from send-on-delta and renewal sampling of random walks."""
from .distributions import (
    Deterministic,
    Gamma,
    Gaussian,
    GaussianCurved,
    IncrementModel,
    TwoPointLattice,
    UnsupportedModelError,
    ladder_height_moments,
    moments,
    rho_closed_form,
)
from .engine import (
    DeterministicInterarrival,
    Exponential,
    ExogenousRenewal,
    Geometric,
    HittingOneSided,
    HittingTwoSided,
    RenewalTrace,
    SecondMomentTrace,
    first_passage,
    simulate_paired,
    simulate_second_moment_trace,
    simulate_trace,
)
from .estimators import Estimate, EstimatorKind, estimate, estimate_sigma, fuse, overshoot_correct, weights_from_sigmas
from .fusion import SensorSpec, network_clt_sample, run_network
from .harness import ExperimentSpec, clt_diagnostic, ordering_report, re_sweep, sigma_consistency
from .rng import RngStream
from .theory import anscombe_ratio, lorden_bounds, lr_error_table, rho_cross_check, wald_residuals

__all__ = [
    "anscombe_ratio",
    "clt_diagnostic",
    "Deterministic",
    "DeterministicInterarrival",
    "estimate",
    "Estimate",
    "estimate_sigma",
    "EstimatorKind",
    "ExogenousRenewal",
    "ExperimentSpec",
    "Exponential",
    "first_passage",
    "fuse",
    "Gamma",
    "Gaussian",
    "GaussianCurved",
    "Geometric",
    "HittingOneSided",
    "HittingTwoSided",
    "IncrementModel",
    "ladder_height_moments",
    "lorden_bounds",
    "lr_error_table",
    "moments",
    "network_clt_sample",
    "ordering_report",
    "overshoot_correct",
    "re_sweep",
    "RenewalTrace",
    "rho_closed_form",
    "rho_cross_check",
    "RngStream",
    "run_network",
    "SecondMomentTrace",
    "SensorSpec",
    "sigma_consistency",
    "simulate_paired",
    "simulate_second_moment_trace",
    "simulate_trace",
    "TwoPointLattice",
    "UnsupportedModelError",
    "wald_residuals",
    "weights_from_sigmas",
]
__version__ = "0.1.0"
