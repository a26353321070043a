"""Causal mediation with parallel-process latent growth curve models."""
from .core import (
    Contrast,
    LGCMError,
    ModelKind,
    ModelSpec,
    NotIdentifiedError,
    NumericalFailure,
    PanelDataset,
    ParameterSet,
    ResidualMode,
    ThetaLayout,
    UnsupportedModelError,
    ValidationError,
    make_params,
    pack,
    theta_layout,
    unpack,
    validate,
)
from .effects import (
    EffectEstimate,
    EffectKind,
    effect_curve,
    nde,
    nde_m1,
    nde_m2,
    nie,
    nie_m1,
    nie_m2,
    total_effect,
)
from .estimator import FitOptions, FitResult, SingularInformationError, fit, observed_information
from .inference import (
    delta_se,
    effect_gradient,
    estimate_effects,
    gradient_check,
    mackinnon_effects,
    wald_interval,
)
from .likelihood import implied_moments, latent_system, subject_loglik, total_loglik
from .simulator import (
    Confounder,
    SimOptions,
    counterfactual_oracle,
    example_params,
    generate,
    random_params,
    recovery_study,
)

__version__ = "0.1.0"
