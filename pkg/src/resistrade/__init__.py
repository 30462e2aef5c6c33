"""Optimal trading under transient power-law impact with endogenous market resistance."""
from .analysis import (ImpactProfile, ScalingFit, decompose_pmi_tmi, eval_gradient, eval_pnl, gamma_scaling_fit,
                       impact_path, inventory, inventory_and_costs, market_impact)
from .estimator import OptimalTradingSolver
from .foc import (ConfigurationError, ConvergenceReport, FOCStepSolver, SchemeConfig, SchemeMatrices, SolveResult,
                  assemble_A, backward_error_Ebf, check_convergence_conditions, foc_error_E1, foc_rhs,
                  iterate_scheme, solve_backward_f, solve_linear_direct, solve_linear_foc_step)
from .kernels import (AdmissibilityError, KernelSpec, NystromMatrices, PenaltyKernelParams, TimeGrid,
                      build_nystrom, build_penalty_matrices, kernel_l2_constant, kernel_value,
                      symmetrized_kernel_matrix)
from .lsmc import (LSMCExpectation, RegressionConfig, RidgeConditionalExpectation, fit_cond_exp,
                   normal_equation_residual, predict_path_conditional)
from .paths import DeterministicExpectation, PathSet, apply_adjoint, apply_forward, inner_product
from .resistance import (ResistanceConvergenceError, ResistanceFn, ResistanceTransformer, resistance_derivative,
                         resistance_error_E2, resistance_value, solve_resistance)
from .signals import (FeatureSet, LaguerreFeatures, OUParams, alpha_closed_form, build_features, laguerre,
                      simulate_mu)

__version__ = "0.1.0"
