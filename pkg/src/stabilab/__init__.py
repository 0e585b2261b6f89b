"""Leave-one-out risk estimation, L^q stability, and PAC bound verification."""

from .bounds import (
    KAPPA,
    BoundsRow,
    GammaSet,
    TailSpec,
    bounded_tail_spec,
    efron_stein_moment_check,
    gamma_set,
    moment_bound_generic,
    pac_bound_bounded,
    pac_bound_subgaussian,
    ridge_moment_bound,
    ridge_variance_term_bound,
    subgaussian_tail_spec,
    tail_prob_bound,
    tail_threshold,
)
from .core_math import harville_residual, operator_norm, solve_regularized
from .datagen import (
    DataSpec,
    Dataset,
    SeedSpec,
    dataset_from_csv,
    dataset_to_csv,
    leave_one_out,
    replace_point,
    sample_dataset,
    verify_assumptions,
)
from .harness import (
    AlgorithmConfig,
    ConfigError,
    ExperimentConfig,
    PreconditionError,
    config_from_dict,
    config_to_dict,
    emit_report,
    load_config,
    run_bounds_table,
    run_coverage,
    run_efron_stein,
    run_experiment,
    run_rate,
    run_stability_sweep,
)
from .learners import (
    CostKind,
    KnnAlgorithm,
    KnnParams,
    MonteCarloEstimate,
    RidgeAlgorithm,
    RidgeModel,
    cost,
    knn_classify,
    loo_estimate,
    predict,
    prediction_error_mc,
    ridge_fit,
    ridge_loo_fast,
)
from .stability import (
    RidgeStabilityInputs,
    StabilityConfig,
    StabilityEstimate,
    SweepRow,
    empirical_lq_stability,
    knn_gamma_1,
    ridge_gamma_q,
    ridge_param_diff_check,
    stability_profile,
    y_norm,
)

__version__ = "0.1.0"
