"""Physics-based synthetic response curves and the analyses around them."""
from .corpus import DEFAULT_DURATION_H, DEFAULT_SNR_RANGE, generate_corpus
from .distribution import (
    DEFAULT_DISTRIBUTION,
    NoiseSpec,
    ParameterDistribution,
    add_noise,
    fit_param_distribution,
    sample_params,
)
from .fitting import FitResult, fit_params_to_curve
from .isotherm import IsothermParameters, fit_isotherm, redlich_peterson
from .lda import lda_project
from .pore import (
    BOUNDS,
    FITTED_NAMES,
    PoreSolution,
    SimulationParameters,
    renkin_hindrance,
    simulate,
    simulate_response,
)

__all__ = [
    "BOUNDS", "DEFAULT_DISTRIBUTION", "DEFAULT_DURATION_H", "DEFAULT_SNR_RANGE", "FITTED_NAMES",
    "FitResult", "IsothermParameters", "NoiseSpec", "ParameterDistribution", "PoreSolution",
    "SimulationParameters", "add_noise", "fit_isotherm", "fit_param_distribution",
    "fit_params_to_curve", "generate_corpus", "lda_project", "redlich_peterson",
    "renkin_hindrance", "sample_params", "simulate", "simulate_response",
]
