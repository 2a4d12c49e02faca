"""Valid post-selection inference and FWER-controlled covariate selection
for large panels, with a nested/ordered variant and a simulation lab."""

from . import errors
from .numerics import log_diff_exp, log_norm_cdf, log_norm_sf, ols_solve, projection_residual
from .ordered import OrderedDecision, OrderedMcConfig, ordered_counts, ordered_fwer_mc, step_down
from .panel_mt import (
    BonferroniDecision,
    MtDecision,
    PValueMatrix,
    TraverseResult,
    bonferroni_reject,
    build_pvalue_matrix,
    cohesion,
    fwer_reject,
    simultaneity_counts,
    traverse,
)
from .posi import (
    Polyhedron,
    PosiCoefficient,
    TruncationInterval,
    build_polyhedron,
    debias,
    estimate_sigma,
    posi_pvalue,
    tn_log_survival,
    tn_logcdf,
    truncation_interval,
    two_sided_log_p,
    unit_pipeline,
)
from .simlab import (
    METHODS,
    MethodResult,
    NoiseSpec,
    SimConfig,
    SimReport,
    StaircaseData,
    fwer_monte_carlo,
    gen_staircase,
    run_benchmarks,
    simulate,
)
from .wlasso import (
    LassoFit,
    WeightVector,
    cross_validate,
    cross_validate_panel,
    fit_weighted_lasso,
    kkt_check,
    lambda_grid,
    normalize_weights,
    uniform_weights,
)

__version__ = "0.1.0"
