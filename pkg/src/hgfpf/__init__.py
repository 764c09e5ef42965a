"""Feedback particle filter with a Hermite-Galerkin gain solver.

The gain K of a scalar feedback particle filter solves (p K)' = -(h - hhat) p.
Here p is replaced by a Gaussian kernel density estimate of the particles and
the auxiliary function f = p K is expanded in generalized Hermite functions;
the Galerkin system is solved by an explicit backward recursion.
"""

from .density import (
    GaussianMixture,
    KdeModel,
    ParticleEnsemble,
    amise_bandwidth_constant,
    calibrated_bandwidth_constant,
    example1_mixture,
    kde_build,
    kde_eval,
    kde_eval_derivative,
    mixture_eval,
    mixture_sample,
    optimal_bandwidth,
)
from .fpf import GAIN_METHODS, FilterConfig, FilterError, FilterOutput, fpf_run
from .gain import (
    ConvergenceError,
    GalerkinGain,
    ObservationFn,
    constant_gain,
    control_u,
    diffusion_map_gain,
    exact_gain,
    galerkin_gain,
    galerkin_rhs,
    galerkin_solve,
    gain_derivative_eval,
    gain_eval,
)
from .hermite import BasisSpec, HermiteSeries, eval_all, eval_derivative_all, eval_series, project
from .metrics import armse, grid_error, loglog_slope, rmse
from .quadrature import QuadratureError, QuadratureRule
from .sde import SdeModel, SimulationError, TruthRun, double_well_model, simulate_truth

__version__ = "0.1.0"
