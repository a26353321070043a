"""Delta-method standard errors, Wald intervals and the product-of-coefficients comparator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .core import Contrast, ModelKind, NumericalFailure, ParameterSet, ValidationError, pack, unpack
from .effects import (
    EffectEstimate,
    EffectKind,
    _covariates,
    effect,
    reference_mediator_means,
)


@dataclass(frozen=True, eq=False)
class GradientVector:
    """Gradient of an effect over the structural block of the layout.

    ``per_unit`` marks the binary-model direct effect, whose gradient is taken
    of the effect per unit of ``x - x*``; :func:`delta_se` rescales it.
    """

    values: np.ndarray
    names: tuple[str, ...]
    kind: EffectKind
    model: ModelKind
    t: float
    contrast: Contrast
    per_unit: bool = False

    def __len__(self):
        return len(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _cov_names(block: str, k: int, p: int) -> list[str]:
    return [f"{block}_{k}[{j + 1}]" for j in range(p)]


def _m1_nde_partials(params, t, contrast) -> dict[str, float]:
    f, g = params.phi, params.gamma
    c = _covariates(params, contrast)
    xs = contrast.x_star[0]
    mi, ms = reference_mediator_means(params, contrast)
    a4, a5 = f[4] + g[4] * t, f[5] + g[5] * t
    out = {"delta_0": a4, "delta_1": a4 * xs, "beta_0": a5, "beta_1": a5 * xs,
           "phi_1": 1.0, "phi_4": mi, "phi_5": ms,
           "gamma_1": t, "gamma_4": mi * t, "gamma_5": ms * t}
    p = params.spec.covariate_dim
    out.update(zip(_cov_names("delta", 2, p), a4 * c))
    out.update(zip(_cov_names("beta", 2, p), a5 * c))
    return out


def _m1_nie_partials(params, t, contrast) -> dict[str, float]:
    f, g = params.phi, params.gamma
    x, xs = contrast.x[0], contrast.x_star[0]
    d, q = x - xs, x * x - x * xs
    d1, b1 = params.delta[1], params.beta[1]
    return {
        "delta_1": (f[2] + g[2] * t) * d + (f[4] + g[4] * t) * q,
        "beta_1": (f[3] + g[3] * t) * d + (f[5] + g[5] * t) * q,
        "phi_2": d1 * d, "phi_3": b1 * d, "phi_4": d1 * q, "phi_5": b1 * q,
        "gamma_2": d1 * t * d, "gamma_3": b1 * t * d, "gamma_4": d1 * t * q, "gamma_5": b1 * t * q,
    }


def _m2_nde_partials(params, t, contrast) -> dict[str, float]:
    f, g = params.phi, params.gamma
    c = _covariates(params, contrast)
    (x1, x2), (x1s, x2s) = contrast.x, contrast.x_star
    d1, d2 = x1 - x1s, x2 - x2s
    mi, ms = reference_mediator_means(params, contrast)
    A = (f[5] + g[5] * t) * d1 + (f[7] + g[7] * t) * d2
    B = (f[6] + g[6] * t) * d1 + (f[8] + g[8] * t) * d2
    out = {"delta_0": A, "delta_1": A * x1s, "delta_2": A * x2s,
           "beta_0": B, "beta_1": B * x1s, "beta_2": B * x2s,
           "phi_1": d1, "phi_2": d2, "phi_5": mi * d1, "phi_6": ms * d1,
           "phi_7": mi * d2, "phi_8": ms * d2,
           "gamma_1": t * d1, "gamma_2": t * d2, "gamma_5": mi * t * d1, "gamma_6": ms * t * d1,
           "gamma_7": mi * t * d2, "gamma_8": ms * t * d2}
    p = params.spec.covariate_dim
    out.update(zip(_cov_names("delta", 3, p), A * c))
    out.update(zip(_cov_names("beta", 3, p), B * c))
    return out


def _m2_nie_partials(params, t, contrast) -> dict[str, float]:
    f, g = params.phi, params.gamma
    (x1, x2), (x1s, x2s) = contrast.x, contrast.x_star
    dd1, dd2 = x1 - x1s, x2 - x2s
    q11, q12 = x1 * x1 - x1 * x1s, x1 * x2 - x1 * x2s
    q21, q22 = x2 * x1 - x2 * x1s, x2 * x2 - x2 * x2s
    d1, d2 = params.delta[1], params.delta[2]
    b1, b2 = params.beta[1], params.beta[2]
    a = {k: f[k] + g[k] * t for k in range(3, 9)}
    out = {
        "delta_1": a[3] * dd1 + a[5] * q11 + a[7] * q21,
        "delta_2": a[3] * dd2 + a[5] * q12 + a[7] * q22,
        "beta_1": a[4] * dd1 + a[6] * q11 + a[8] * q21,
        "beta_2": a[4] * dd2 + a[6] * q12 + a[8] * q22,
    }
    phi = {3: d1 * dd1 + d2 * dd2, 4: b1 * dd1 + b2 * dd2,
           5: d1 * q11 + d2 * q12, 6: b1 * q11 + b2 * q12,
           7: d1 * q21 + d2 * q22, 8: b1 * q21 + b2 * q22}
    for k, v in phi.items():
        out[f"phi_{k}"] = v
        out[f"gamma_{k}"] = v * t
    return out


_PARTIALS = {
    (ModelKind.BINARY, EffectKind.NDE): _m1_nde_partials,
    (ModelKind.BINARY, EffectKind.NIE): _m1_nie_partials,
    (ModelKind.GROWTH, EffectKind.NDE): _m2_nde_partials,
    (ModelKind.GROWTH, EffectKind.NIE): _m2_nie_partials,
}


def effect_gradient(kind, params: ParameterSet, t: float, contrast: Contrast) -> GradientVector:
    """Analytic gradient of an effect over the structural coefficients, in layout order."""
    kind = EffectKind(kind)
    model = params.spec.model_kind
    effect(kind, params, t, contrast)  # validates contrast shape against the model
    names = params.layout.structural_names
    if kind is EffectKind.TOTAL:
        nde_g = effect_gradient(EffectKind.NDE, params, t, contrast)
        nie_g = effect_gradient(EffectKind.NIE, params, t, contrast)
        scale = (contrast.x[0] - contrast.x_star[0]) if nde_g.per_unit else 1.0
        values = nde_g.values * scale + nie_g.values
        return GradientVector(values, names, kind, model, float(t), contrast)
    partials = _PARTIALS[(model, kind)](params, float(t), contrast)
    values = np.array([float(partials.get(n, 0.0)) for n in names])
    per_unit = model is ModelKind.BINARY and kind is EffectKind.NDE
    return GradientVector(values, names, kind, model, float(t), contrast, per_unit)


def gradient_check(params: ParameterSet, t: float, contrast: Contrast,
                   kinds: Sequence = tuple(EffectKind)) -> dict[str, float]:
    """Norm-wise relative error of each analytic effect gradient against central differences."""
    from .estimator import fd_gradient

    spec = params.spec
    flat0 = pack(spec, params)
    k = params.layout.n_structural
    out = {}
    for kind in kinds:
        kind = EffectKind(kind)
        g = effect_gradient(kind, params, t, contrast)
        analytic = g.values * (contrast.x[0] - contrast.x_star[0]) if g.per_unit else g.values

        def f(s, kind=kind):
            flat = flat0.copy()
            flat[:k] = s
            return effect(kind, unpack(spec, flat), t, contrast)

        num = fd_gradient(f, flat0[:k])
        denom = max(float(np.max(np.abs(num))), np.finfo(float).tiny)
        out[kind.value] = float(np.max(np.abs(analytic - num)) / denom)
    return out


def delta_se(grad: GradientVector, vcov_structural, contrast: Contrast | None = None) -> float:
    """First-order delta-method standard error ``sqrt(g' V g)``.

    For the binary-model direct effect the result is multiplied by ``|x - x*|``.
    """
    V = np.asarray(vcov_structural, dtype=float)
    k = len(grad.values)
    if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] < k:
        raise ValidationError([f"vcov has shape {V.shape}, gradient has length {k}"])
    V = V[:k, :k]
    q = float(grad.values @ V @ grad.values)
    if q < -1e-10:
        raise NumericalFailure(f"negative variance {q:.3g}: covariance matrix is not PSD")
    se = float(np.sqrt(max(q, 0.0)))
    if grad.per_unit:
        contrast = grad.contrast if contrast is None else contrast
        se *= abs(contrast.x[0] - contrast.x_star[0])
    return se


def wald_interval(point: float, se: float, level: float = 0.95) -> tuple[float, float, float]:
    """Normal-theory interval and two-sided p-value."""
    if not 0.0 < level < 1.0:
        raise ValidationError(["level must lie strictly between 0 and 1"])
    if se < 0:
        raise ValidationError(["standard error must be nonnegative"])
    if se == 0:
        return float(point), float(point), 1.0 if point == 0 else 0.0
    z = stats.norm.ppf(0.5 + level / 2.0)
    p = 2.0 * stats.norm.sf(abs(point) / se)
    return float(point - z * se), float(point + z * se), float(p)


def estimate_effects(params: ParameterSet, vcov_structural, times: Iterable[float],
                     contrast: Contrast, kinds: Sequence = (EffectKind.NDE, EffectKind.NIE),
                     level: float = 0.95) -> list[EffectEstimate]:
    """Effects on a time grid with delta-method SEs, Wald intervals and p-values."""
    out = []
    for t in times:
        for kind in kinds:
            kind = EffectKind(kind)
            point = effect(kind, params, float(t), contrast)
            se = delta_se(effect_gradient(kind, params, float(t), contrast), vcov_structural)
            lo, hi, p = wald_interval(point, se, level)
            out.append(EffectEstimate(kind, params.spec.model_kind, float(t), contrast,
                                      point, se, lo, hi, p))
    return out


@dataclass(frozen=True)
class MacKinnonEffects:
    direct: tuple[float, float]
    indirect: tuple[float, float]


def mackinnon_effects(params: ParameterSet, vcov_structural) -> MacKinnonEffects:
    """Time-constant comparator: direct ``gamma_1``, indirect ``beta_1 * gamma_3``.

    The indirect SE is the first-order product-of-coefficients formula using
    only the variances of ``beta_1`` and ``gamma_3``.
    """
    spec = params.spec
    if spec.model_kind is not ModelKind.BINARY or spec.interaction:
        raise ValidationError(["comparator needs the binary-exposure model without interaction"])
    V = np.asarray(vcov_structural, dtype=float)
    lay = params.layout
    if V.shape[0] < lay.n_structural:
        raise ValidationError([f"vcov has shape {V.shape}, layout has {lay.n_structural} structural entries"])
    ib, ig1, ig3 = lay.index("beta_1"), lay.index("gamma_1"), lay.index("gamma_3")
    b1, g1, g3 = params.beta[1], params.gamma[1], params.gamma[3]
    se_ind = float(np.sqrt(b1 ** 2 * V[ig3, ig3] + g3 ** 2 * V[ib, ib]))
    return MacKinnonEffects((float(g1), float(np.sqrt(V[ig1, ig1]))), (float(b1 * g3), se_ind))
