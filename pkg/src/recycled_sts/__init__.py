"""Two-stage estimation for nonlinear hierarchical models with a recycled
(random-weight) bootstrap for population-parameter intervals."""

__version__ = "0.1.0"

from ._jit import USE_NUMBA
from .errors import (
    ConfigError,
    EstimationError,
    InvalidArgumentError,
    NumericDomainError,
    RankDeficiencyError,
    RecycledStsError,
    SingularDesignError,
)
from .models import MODELS, ModelSpec, eval_jacobian, eval_model, get_model
from .nls import FitOptions, FitResult, IndividualData, fit_wls, objective
from .recycle import RecycleConfig, RecycleRun, build_ci, ks_to_normal, recycle_bootstrap, recycle_once
from .simulate import (
    NoiseSpec,
    SimDesign,
    SimReport,
    diagnose_clt,
    gen_dataset,
    run_coverage_experiment,
    run_mse_experiment,
    sample_noise,
)
from .sts import HierDataset, StsFit, estimate_D, fit_sts, sigma_matrix, stage_one, stage_two
from .weights import WeightScheme, check_assumption_w, draw_weights, get_scheme, tau_sq

__all__ = [name for name in dir() if not name.startswith("_")]
