"""Spectral convergence of the Neumann Laplacian under thin exterior channels."""

from .analytic import (const_channel_tau, rect_dirichlet_eigs, rect_neumann_eigs,
                       robin_interval_lambda, robin_limit_ratio)
from .eigensolve import EigenRequest, EigenResult, dense_oracle, lobpcg, rayleigh_quotient
from .geometry import (ChannelProfile, PerturbedDomain, check_hypotheses, domain_distance,
                       m_eps, measure_excess, scale_channel, tau_lower_bound,
                       tau_upper_bound_nondecreasing)
from .spectral import (bracketing_split, compute_tau, compute_tau_two_dirichlet,
                       convergence_sweep, dirichlet_example_spectrum, dumbbell_spectrum,
                       eigenfunction_distance)

__version__ = "0.1.0"

__all__ = [
    "ChannelProfile", "PerturbedDomain", "check_hypotheses", "domain_distance", "m_eps",
    "measure_excess", "scale_channel", "tau_lower_bound", "tau_upper_bound_nondecreasing",
    "const_channel_tau", "rect_dirichlet_eigs", "rect_neumann_eigs", "robin_interval_lambda",
    "robin_limit_ratio", "EigenRequest", "EigenResult", "dense_oracle", "lobpcg",
    "rayleigh_quotient", "bracketing_split", "compute_tau", "compute_tau_two_dirichlet",
    "convergence_sweep", "dirichlet_example_spectrum", "dumbbell_spectrum",
    "eigenfunction_distance",
]
