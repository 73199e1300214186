"""Particle gradient descent for maximum marginal likelihood, with closed-form checks."""

from .calculus import (BoundTerms, FlowState, bound_terms, debruijn_residual, fisher_info,
                       flow_rhs, free_energy, free_energy_gap, integrate_flow, energy_decay_excess,
                       distance_decay_excess, xlsi_ratio, xlsi_upper_bound_logZ, xt2i_slack)
from .errors import (ConfigurationError, DegenerateError, DomainError, IntegrationError,
                     NearOptimalInputError, NotStronglyConcaveError, NumericalBlowupError,
                     PGDLabError, PreconditionError, UnsupportedInputError)
from .gaussian import GaussianMeasure, d_metric, w2_gaussian
from .metrics import (SlopeFit, d_coupled_estimate, d_random_estimate, exp_rate_fit,
                      loglog_slope, w2_cloud_to_gaussian_1d, w2_empirical)
from .models import (FactorizedGaussianModel, LatentModel, LogisticModel, QuadraticModel,
                     analytic_optimum, concavity_constants, grad, load_model, log_lik,
                     shift_to_origin, toy_model)
from .sampler import (ExplicitInit, GaussianInit, ParticleState, RunConfig, Trajectory,
                      WarmStart, estimate_moment, ipla_step, pgd_step, run, run_batch)

__version__ = "0.1.0"
