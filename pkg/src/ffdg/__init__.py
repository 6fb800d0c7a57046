"""Discontinuous Galerkin solver for stochastic fluid-fluid processes."""

from .analysis import (analytic_chi_oracle, boundary_width_study, convergence_study,
                       star_seminorm)
from .dg_core import assemble_generator
from .errors import FFDGError
from .model import (ModelSpec, RateField, build_bandwidth_model, load_model, partition_rates,
                    validate_model)
from .montecarlo import estimate_stationary, simulate_first_return, simulate_first_returns
from .operators import assemble_B, assemble_D, assemble_R
from .riccati import build_K, first_return_cdf, solve_psi
from .stationary import discretise, solve_stationary
from .stencil import Stencil, make_basis, make_omega_stencil, make_uniform_stencil

__all__ = [
    "FFDGError", "ModelSpec", "RateField", "Stencil", "analytic_chi_oracle", "assemble_B",
    "assemble_D", "assemble_R", "assemble_generator", "boundary_width_study", "build_K",
    "build_bandwidth_model", "convergence_study", "discretise", "estimate_stationary",
    "first_return_cdf", "load_model", "make_basis", "make_omega_stencil",
    "make_uniform_stencil", "partition_rates", "simulate_first_return",
    "simulate_first_returns", "solve_psi", "solve_stationary", "star_seminorm",
    "validate_model",
]
