"""Deconfounding-score weighting for treatment effects under poor overlap."""

from .estimators import (
    Dataset,
    DiscreteModel,
    EstimateReport,
    InfiniteWeightError,
    aipw_ate,
    aipw_att,
    bias_diagnostic,
    clip_propensities,
    discrete_model_corpus,
    ipw_ate,
    ipw_att,
    naive,
    regression_att,
    verify_bias_formula,
)
from .regmodels import (
    DesignMatrix,
    FittedGLM,
    SeparationError,
    SingularSystemError,
    cross_validate,
    cv_path,
    fit_linear,
    fit_logistic,
    lambda_grid,
)
from .scorefamily import (
    CollinearityError,
    DeconfoundingScore,
    ReducedPropensity,
    ScoreFamily,
    build_family,
    conditional_covariance,
    gamma_of_w,
    reduced_propensity,
)
from .simulation import (
    CellResult,
    CellSpec,
    DGPConfig,
    ExperimentGrid,
    MatchedBaselines,
    aggregate,
    generate,
    make_dgp_config,
    oracle_scores,
    parse_grid,
    run_cell,
    run_grid,
    variance_matched_baselines,
    write_outputs,
)

__version__ = "0.1.0"

__all__ = [
    "CellResult",
    "CellSpec",
    "CollinearityError",
    "DGPConfig",
    "Dataset",
    "DeconfoundingScore",
    "DesignMatrix",
    "DiscreteModel",
    "EstimateReport",
    "ExperimentGrid",
    "FittedGLM",
    "InfiniteWeightError",
    "MatchedBaselines",
    "ReducedPropensity",
    "ScoreFamily",
    "SeparationError",
    "SingularSystemError",
    "aggregate",
    "aipw_ate",
    "aipw_att",
    "bias_diagnostic",
    "build_family",
    "clip_propensities",
    "conditional_covariance",
    "cross_validate",
    "cv_path",
    "discrete_model_corpus",
    "fit_linear",
    "fit_logistic",
    "gamma_of_w",
    "generate",
    "ipw_ate",
    "ipw_att",
    "lambda_grid",
    "make_dgp_config",
    "naive",
    "oracle_scores",
    "parse_grid",
    "reduced_propensity",
    "regression_att",
    "run_cell",
    "run_grid",
    "variance_matched_baselines",
    "verify_bias_formula",
    "write_outputs",
    "__version__",
]
