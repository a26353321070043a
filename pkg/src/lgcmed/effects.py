"""Closed-form natural direct and indirect effects as functions of time.

All functions evaluate one expression that contains the interaction terms;
when a model has no interaction those coefficients are zero, so the
interaction-free formulas fall out exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Contrast, ModelKind, ParameterSet, ValidationError


class EffectKind(str, enum.Enum):
    NDE = "NDE"
    NIE = "NIE"
    TOTAL = "Total"


@dataclass(frozen=True)
class EffectEstimate:
    kind: EffectKind
    model: ModelKind
    t: float
    contrast: Contrast
    point: float
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    p_value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EffectKind(self.kind))
        if self.se is not None and self.se < 0:
            raise ValidationError(["standard error must be nonnegative"])


def _covariates(params: ParameterSet, contrast: Contrast) -> np.ndarray:
    # The direct effect with interaction is specific to c; without interaction c drops out.
    p = params.spec.covariate_dim
    if params.spec.interaction:
        return contrast.covariates(p)
    return np.zeros(p)


def _binary_levels(params: ParameterSet, contrast: Contrast):
    if params.spec.model_kind is not ModelKind.BINARY:
        raise ValidationError(["expected binary-exposure parameters"])
    if len(contrast.x) != 1:
        raise ValidationError(["binary-exposure contrast needs a single (x, x*) pair"])
    return contrast.x[0], contrast.x_star[0]


def _growth_levels(params: ParameterSet, contrast: Contrast):
    if params.spec.model_kind is not ModelKind.GROWTH:
        raise ValidationError(["expected growth-exposure parameters"])
    if len(contrast.x) != 2:
        raise ValidationError(["growth-exposure contrast needs (x1, x1*, x2, x2*)"])
    return contrast.x[0], contrast.x_star[0], contrast.x[1], contrast.x_star[1]


def reference_mediator_means(params: ParameterSet, contrast: Contrast) -> tuple[float, float]:
    """Expected mediator intercept and slope under the reference exposure."""
    c = _covariates(params, contrast)
    d, b = params.delta, params.beta
    if params.spec.model_kind is ModelKind.GROWTH:
        _, x1s, _, x2s = _growth_levels(params, contrast)
        return (d[0] + d[1] * x1s + d[2] * x2s + params.delta_c @ c,
                b[0] + b[1] * x1s + b[2] * x2s + params.beta_c @ c)
    _, xs = _binary_levels(params, contrast)
    return d[0] + d[1] * xs + params.delta_c @ c, b[0] + b[1] * xs + params.beta_c @ c


def nde_m1_per_unit(params: ParameterSet, t: float, contrast: Contrast) -> float:
    """Direct effect per unit of ``x - x*`` in the binary-exposure model."""
    f, g = params.phi, params.gamma
    mi, ms = reference_mediator_means(params, contrast)
    return float(f[1] + f[4] * mi + f[5] * ms + g[1] * t + g[4] * mi * t + g[5] * ms * t)


def nde_m1(params: ParameterSet, t: float, contrast: Contrast) -> float:
    x, xs = _binary_levels(params, contrast)
    return nde_m1_per_unit(params, t, contrast) * (x - xs)


def nie_m1(params: ParameterSet, t: float, contrast: Contrast) -> float:
    x, xs = _binary_levels(params, contrast)
    f, g = params.phi, params.gamma
    d1, b1 = params.delta[1], params.beta[1]
    main = ((f[2] + g[2] * t) * d1 + (f[3] + g[3] * t) * b1) * (x - xs)
    inter = ((f[4] + g[4] * t) * d1 + (f[5] + g[5] * t) * b1) * (x * x - x * xs)
    return float(main + inter)


def nde_m2(params: ParameterSet, t: float, contrast: Contrast) -> float:
    x1, x1s, x2, x2s = _growth_levels(params, contrast)
    f, g = params.phi, params.gamma
    mi, ms = reference_mediator_means(params, contrast)
    first = (f[1] + g[1] * t + (f[5] + g[5] * t) * mi + (f[6] + g[6] * t) * ms) * (x1 - x1s)
    second = (f[2] + g[2] * t + (f[7] + g[7] * t) * mi + (f[8] + g[8] * t) * ms) * (x2 - x2s)
    return float(first + second)


def nie_m2(params: ParameterSet, t: float, contrast: Contrast) -> float:
    x1, x1s, x2, x2s = _growth_levels(params, contrast)
    f, g = params.phi, params.gamma
    d1, d2 = params.delta[1], params.delta[2]
    b1, b2 = params.beta[1], params.beta[2]
    a3, a4 = f[3] + g[3] * t, f[4] + g[4] * t
    a5, a6 = f[5] + g[5] * t, f[6] + g[6] * t
    a7, a8 = f[7] + g[7] * t, f[8] + g[8] * t
    out = (
        (a3 * d1 + a4 * b1) * (x1 - x1s)
        + (a3 * d2 + a4 * b2) * (x2 - x2s)
        + (a5 * d1 + a6 * b1) * (x1 * x1 - x1 * x1s)
        + (a5 * d2 + a6 * b2) * (x1 * x2 - x1 * x2s)
        + (a7 * d1 + a8 * b1) * (x2 * x1 - x2 * x1s)
        + (a7 * d2 + a8 * b2) * (x2 * x2 - x2 * x2s)
    )
    return float(out)


def nde(params: ParameterSet, t: float, contrast: Contrast) -> float:
    if params.spec.model_kind is ModelKind.GROWTH:
        return nde_m2(params, t, contrast)
    return nde_m1(params, t, contrast)


def nie(params: ParameterSet, t: float, contrast: Contrast) -> float:
    if params.spec.model_kind is ModelKind.GROWTH:
        return nie_m2(params, t, contrast)
    return nie_m1(params, t, contrast)


def total_effect(params: ParameterSet, t: float, contrast: Contrast) -> float:
    return nde(params, t, contrast) + nie(params, t, contrast)


_POINT = {EffectKind.NDE: nde, EffectKind.NIE: nie, EffectKind.TOTAL: total_effect}


def effect(kind, params: ParameterSet, t: float, contrast: Contrast) -> float:
    return _POINT[EffectKind(kind)](params, t, contrast)


def effect_curve(params: ParameterSet, times: Iterable[float], contrast: Contrast,
                 kinds: Sequence = (EffectKind.NDE, EffectKind.NIE)) -> list[EffectEstimate]:
    """Point estimates on a time grid, time-major then kind order."""
    out = []
    for t in times:
        for kind in kinds:
            kind = EffectKind(kind)
            out.append(EffectEstimate(kind, params.spec.model_kind, float(t), contrast,
                                      effect(kind, params, float(t), contrast)))
    return out


def default_growth_contrast(a1: float, a2: float, c: Iterable[float] = ()) -> Contrast:
    """Exposure intercept/slope moved from (0, 0) to (a1, a2)."""
    return Contrast.growth(a1, 0.0, a2, 0.0, c)
