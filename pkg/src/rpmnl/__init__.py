"""Random-parameters multinomial logit with heterogeneity in means and variances.

Estimation by maximum simulated likelihood on Halton draws, post-estimation
marginal effects and likelihood-ratio tests, and ingestion of crash-severity
CSV exports.
"""

__version__ = "0.1.0"

from .data import (
    ChoiceDataset,
    ChoiceObservation,
    ModelSpec,
    RandomParameterSpec,
    SeverityLevel,
    build_design,
    validate_spec,
)
from .estimator import EstimationResult, OptimizerConfig, estimate
from .quasirandom import DrawMatrix, HaltonConfig, make_draws
from .simll import ProbabilityEngine

__all__ = [
    "ChoiceDataset",
    "ChoiceObservation",
    "DrawMatrix",
    "EstimationResult",
    "HaltonConfig",
    "ModelSpec",
    "OptimizerConfig",
    "ProbabilityEngine",
    "RandomParameterSpec",
    "SeverityLevel",
    "build_design",
    "estimate",
    "make_draws",
    "validate_spec",
]
