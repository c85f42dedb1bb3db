"""Nuclear-norm matrix completion for causal panel data, with baseline
estimators, covariate extensions and a pseudo-treatment evaluation
harness."""

from .baselines import EnConfig, Estimate, EstimatorSpec, fit_did, fit_hr_en, fit_sc_adh, fit_vt_en, run_estimator
from .covariate_model import CovariateSet, fit_ar1, fit_covariate_model, fit_weighted
from .errors import (
    DimensionError,
    EmptyMaskError,
    IdentificationError,
    IllPosedError,
    InfeasibleError,
    ObjectiveIncreaseWarning,
    PanelError,
    ParseError,
)
from .harness import PseudoTreatmentPlan, SyntheticSpec, generate_synthetic, run_comparison
from .panel import ObservationMask, mask_block, mask_from_pairs, mask_staggered
from .soft_impute import CvConfig, FitResult, McnnmConfig, factorize, fit_mcnnm, fit_mcnnm_cv, lambda_max, shrink

__version__ = "0.1.0"

__all__ = [
    "CovariateSet",
    "CvConfig",
    "DimensionError",
    "EmptyMaskError",
    "EnConfig",
    "Estimate",
    "EstimatorSpec",
    "FitResult",
    "IdentificationError",
    "IllPosedError",
    "InfeasibleError",
    "McnnmConfig",
    "ObjectiveIncreaseWarning",
    "ObservationMask",
    "PanelError",
    "ParseError",
    "PseudoTreatmentPlan",
    "SyntheticSpec",
    "factorize",
    "fit_ar1",
    "fit_covariate_model",
    "fit_did",
    "fit_hr_en",
    "fit_mcnnm",
    "fit_mcnnm_cv",
    "fit_sc_adh",
    "fit_vt_en",
    "fit_weighted",
    "generate_synthetic",
    "lambda_max",
    "mask_block",
    "mask_from_pairs",
    "mask_staggered",
    "run_comparison",
    "run_estimator",
    "shrink",
]
