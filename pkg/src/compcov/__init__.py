"""Direct estimation of sparse, positive-definite basis covariance matrices
from compositional data, jointly across populations."""

from .data import (
    CompositionDataset,
    CovarianceTensor,
    GroundTruthSpec,
    VariationTensor,
    closed_form_diagonal,
    model_truth,
    simulate_dataset,
    variation_matrix,
    variation_tensor,
)
from .metrics import (
    ErrorNorms,
    MetricsReport,
    error_norms,
    metrics_report,
    oracle_baseline,
    to_correlation,
    tpr_tnr,
)
from .solver import (
    FitResult,
    NumericError,
    SolverConfig,
    SolverState,
    default_step_size,
    fit,
    grad_loss,
    loss,
    penalty,
    project_psd_floor,
    prox_sparse_group,
    surrogate_q,
)
from .tuning import (
    CvReport,
    StabilityReport,
    TuningGrid,
    bootstrap_stability,
    cv_select,
    default_gamma_grid,
    default_lambda_grid,
    make_folds,
    validation_select,
)

__version__ = "0.1.0"

__all__ = [
    "CompositionDataset",
    "CovarianceTensor",
    "CvReport",
    "ErrorNorms",
    "FitResult",
    "GroundTruthSpec",
    "MetricsReport",
    "NumericError",
    "SolverConfig",
    "SolverState",
    "StabilityReport",
    "TuningGrid",
    "VariationTensor",
    "bootstrap_stability",
    "closed_form_diagonal",
    "cv_select",
    "default_gamma_grid",
    "default_lambda_grid",
    "default_step_size",
    "error_norms",
    "fit",
    "grad_loss",
    "loss",
    "make_folds",
    "metrics_report",
    "model_truth",
    "oracle_baseline",
    "penalty",
    "project_psd_floor",
    "prox_sparse_group",
    "simulate_dataset",
    "surrogate_q",
    "to_correlation",
    "tpr_tnr",
    "validation_select",
    "variation_matrix",
    "variation_tensor",
]
