"""Bayesian robust tensor-ring completion."""

from .inference import (
    Hyperpriors,
    InferenceConfig,
    NumericalError,
    PosteriorState,
    RunReport,
    elbo,
    fit,
    initialize,
    predict,
)
from .ring import tr_full, tr_svd

__version__ = "0.1.0"
