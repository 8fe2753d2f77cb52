"""Two-membranes problem for Pucci extremal operators: penalization solver and diagnostics."""

from ._backend import BACKEND
from .core import (OperatorKind, OperatorSpec, PenaltyConfig, PucciParams, beta_eps_eval,
                   beta_eval, eigen_sym, operator_eval, pucci_minus, pucci_plus)
from .errors import (ConfigurationError, DivergenceError, NonConvergenceError, StageFailure,
                     StencilError, TwoMembranesError, UnsupportedDimensionError)
from .grid import (Domain, Field, FrameSet, apply_operator, build_domain, discrete_hessian,
                   discrete_operator, frame_set, second_difference)
from .solver import (ProblemDef, ProblemSpec, SolutionPair, SolveReport, SolverConfig,
                     penalized_map, solve_dirichlet, solve_penalized, solve_two_membranes)

from .verify import (AnalyticCase, ResidualReport, analytic_library, barrier_check, get_case,
                     nonuniqueness_demo, residual_report)
from .diagnostics import (contact_eigen_check, holder_seminorm, nondegeneracy_curve,
                          refinement_study, regularity_report, second_diff_supnorm)

__version__ = "0.1.0"
