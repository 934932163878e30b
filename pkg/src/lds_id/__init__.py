"""Constrained least-squares identification of stable linear dynamical systems."""

from lds_id.dynamics import (
    LdsModel,
    NoiseSpec,
    Trajectory,
    gamma_matrix,
    random_stable_matrix,
    simulate,
    spectral_norm,
    spectral_radius,
    stability_param_J,
)
from lds_id.estimators import (
    DataMatrices,
    EstimateResult,
    L1Ball,
    SolverConfig,
    Subspace,
    Unconstrained,
    build_data_matrices,
    check_first_order_inequality,
    constrained_ls,
    ols,
    project,
)
from lds_id.geometry import (
    ComplexityReport,
    L1DescentCone,
    SubspaceCone,
    beta,
    complexity_report,
    dudley_gamma_bound,
    gamma1_bound_l1,
    gamma_bounds_subspace,
    gaussian_width_mc,
    theorem1_bound,
)
from lds_id.experiments import ExperimentPlan, ExperimentRecord, fit_loglog_slope, run_plan

__version__ = "0.1.0"
