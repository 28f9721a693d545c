"""Two-regime regression with factor-driven switching.

Least-squares estimation of y_t = x_t'beta + x_t'delta 1{f_t'gamma > 0} + eps_t
via exact mixed-integer optimization, PCA extraction of latent switching
factors from a wide panel, wild-bootstrap inference on the threshold index,
l0 factor selection, and a Monte Carlo harness.
"""

from .model import (Dataset, DimensionError, EstimationResult, ParamVector,
                    SearchSpace, SolveStatus, build_design, read_matrix_csv,
                    regime_indicator, ssr)
from .estimator import (BcdConfig, DegenerateDesignWarning, EstimationError,
                        MiqpForm, alpha_covariance, bcd, build_miqp,
                        classification_error, compute_Mt, default_search_space,
                        estimate_exact, estimate_miqp, ols_given_gamma)
from .optim import (MioProblem, MioSolution, SolverConfig, branch_and_bound,
                    enumerate_cells, scan_cells, solve_relaxation)
from .pca import (FactorEstimate, RotationMatrix, estimate_factors,
                  matrix_sqrt_psd, rotation_matrix, threshold_covariance)

__version__ = "0.1.0"
