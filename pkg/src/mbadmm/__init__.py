"""Multi-block ADMM for linearly coupled convex problems, with per-iteration
certificates, reference oracles and deterministic test instances."""

from .core import (Perturbed, Plain, RunResult, Scenario2, SolverConfig, Trace, auto_gamma, compute_mu,
                   ergodic_point, initial_state, perturbed_iterate, plain_iterate, run, scenario2_iterate)
from .diagnostics import (BoundConstants, CertificateRecord, augmented_lagrangian, ergodic_gap,
                          finite_length_monitor, kkt_residual)
from .errors import AdmmError
from .instances import InstanceRecipe, make_divergence_instance, make_qp_instance, make_sharing_instance
from .oracle import OracleSolution, solve_exact_qp, solve_small_nonsmooth
from .problem import (Ball, BlockSpec, Box, Free, NonNegative, ProblemSpec, Quadratic, SquaredDistance,
                      WeightedL1, Zero, primal_residual)
from .rates import RateReport, fit_rate

__version__ = "0.1.0"
