"""Forward simulation of the structural equations.

Besides generating panel data for the estimator, this module computes natural
effects by brute force: it draws each unit's disturbances once and evaluates
the outcome under the counterfactual exposure / mediator-process combinations.
None of the closed-form effect expressions are used here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Contrast,
    ModelSpec,
    PanelDataset,
    ParameterSet,
    ValidationError,
    check,
    make_params,
    theta_layout,
    unpack,
)


@dataclass(frozen=True)
class Confounder:
    """Unobserved standard-normal ``U`` loading on the mediator and outcome latents."""

    effect_on_mediator: tuple[float, float] = (0.0, 0.0)
    effect_on_outcome: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class SimOptions:
    n: int
    seed: int = 0
    p_x: float = 0.5
    confounder: Confounder | None = None
    # covariates are iid N(0, 1) per dimension; exposure law of the growth model
    # comes from rho_0, lambda_0 and Psi_X
    missing_rate: float = 0.0

    def __post_init__(self):
        problems = []
        if int(self.n) != self.n or self.n < 0:
            problems.append("n must be a nonnegative integer")
        if not 0.0 <= self.p_x <= 1.0:
            problems.append("p_x must lie in [0, 1]")
        if not 0.0 <= self.missing_rate < 1.0:
            problems.append("missing_rate must lie in [0, 1)")
        if int(self.seed) != self.seed or self.seed < 0 or self.seed >= 2 ** 64:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise ValidationError(problems)


def example_params(spec: ModelSpec) -> ParameterSet:
    """Moderate, well-identified parameter values for any spec.

    Used as the truth in recovery studies and demonstrations.
    """
    vals = {"delta_0": 1.0, "delta_1": 0.5, "beta_0": 0.4, "beta_1": 0.3,
            "phi_0": 0.5, "gamma_0": 0.2}
    if spec.is_growth:
        vals.update({"rho_0": 0.5, "lambda_0": 0.2, "delta_2": 0.4, "beta_2": 0.2,
                     "phi_1": 0.4, "phi_2": 0.3, "phi_3": 0.5, "phi_4": 0.6,
                     "gamma_1": 0.2, "gamma_2": 0.3, "gamma_3": 0.1, "gamma_4": 0.4})
        inter = {"phi_5": 0.2, "phi_6": -0.2, "phi_7": 0.1, "phi_8": 0.1,
                 "gamma_5": 0.1, "gamma_6": 0.1, "gamma_7": -0.1, "gamma_8": 0.2}
        cov_block = 3
    else:
        vals.update({"phi_1": 0.4, "phi_2": 0.5, "phi_3": 0.6,
                     "gamma_1": 0.3, "gamma_2": 0.1, "gamma_3": 0.4})
        inter = {"phi_4": 0.2, "phi_5": -0.3, "gamma_4": 0.1, "gamma_5": 0.2}
        cov_block = 2
    if spec.interaction:
        vals.update(inter)
    for j in range(spec.covariate_dim):
        sign = 1.0 if j % 2 == 0 else -1.0
        vals[f"delta_{cov_block}[{j + 1}]"] = 0.3 * sign
        vals[f"beta_{cov_block}[{j + 1}]"] = 0.1 * sign
        vals[f"phi_{cov_block + 4 + 2 * spec.is_growth}[{j + 1}]"] = 0.2 * sign
        vals[f"gamma_{cov_block + 4 + 2 * spec.is_growth}[{j + 1}]"] = -0.1 * sign
    for name in theta_layout(spec).variance_names:
        if name.startswith("sigma2_"):
            vals[name] = 0.5
        elif name.endswith("_11"):
            vals[name] = 1.0
        elif name.endswith("_21"):
            vals[name] = 0.1
        else:
            vals[name] = 0.25
    return make_params(spec, vals)


def random_params(spec: ModelSpec, rng, scale: float = 0.5) -> ParameterSet:
    """Random valid parameters: coefficients ~ N(0, scale^2), moderate PD variances."""
    lay = theta_layout(spec)
    flat = np.zeros(len(lay))
    k = lay.n_structural
    flat[:k] = rng.normal(0.0, scale, k)
    for i, name in enumerate(lay.variance_names, start=k):
        if name.startswith("sigma2_"):
            flat[i] = rng.uniform(0.3, 1.2)
    for i, name in enumerate(lay.variance_names, start=k):
        if name.endswith("_11"):
            v1, v2 = rng.uniform(0.2, 1.0, 2)
            r = rng.uniform(-0.5, 0.5)
            flat[i], flat[i + 1], flat[i + 2] = v1, r * np.sqrt(v1 * v2), v2
    return unpack(spec, flat)


def _factor(cov: np.ndarray) -> np.ndarray:
    """Square-root factor ``F`` with ``F F' = cov``; tolerates PSD input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def _draw_pair(rng, cov, n):
    return rng.standard_normal((n, 2)) @ _factor(np.asarray(cov)).T


def mediator_latents(params: ParameterSet, x, c, nu):
    """Mediator intercept and slope at exposure level(s) ``x``.

    ``x`` is an array of shape ``(n,)`` for the binary model or ``(n, 2)``
    holding (I_X, S_X) for the growth model.
    """
    d, b = params.delta, params.beta
    if params.spec.is_growth:
        x1, x2 = x[..., 0], x[..., 1]
        im = d[0] + d[1] * x1 + d[2] * x2 + c @ params.delta_c + nu[:, 0]
        sm = b[0] + b[1] * x1 + b[2] * x2 + c @ params.beta_c + nu[:, 1]
    else:
        im = d[0] + d[1] * x + c @ params.delta_c + nu[:, 0]
        sm = b[0] + b[1] * x + c @ params.beta_c + nu[:, 1]
    return im, sm


def outcome_latents(params: ParameterSet, x, im, sm, c, nu):
    f, g = params.phi, params.gamma
    if params.spec.is_growth:
        x1, x2 = x[..., 0], x[..., 1]
        iy = (f[0] + f[1] * x1 + f[2] * x2 + f[3] * im + f[4] * sm
              + f[5] * x1 * im + f[6] * x1 * sm + f[7] * x2 * im + f[8] * x2 * sm
              + c @ params.phi_c + nu[:, 0])
        sy = (g[0] + g[1] * x1 + g[2] * x2 + g[3] * im + g[4] * sm
              + g[5] * x1 * im + g[6] * x1 * sm + g[7] * x2 * im + g[8] * x2 * sm
              + c @ params.gamma_c + nu[:, 1])
    else:
        iy = (f[0] + f[1] * x + f[2] * im + f[3] * sm + f[4] * x * im + f[5] * x * sm
              + c @ params.phi_c + nu[:, 0])
        sy = (g[0] + g[1] * x + g[2] * im + g[3] * sm + g[4] * x * im + g[5] * x * sm
              + c @ params.gamma_c + nu[:, 1])
    return iy, sy


def _series(intercept, slope, tau, sigma2, rng):
    n, T = intercept.shape[0], tau.size
    noise = rng.standard_normal((n, T)) * np.sqrt(np.broadcast_to(sigma2, (T,)))
    return intercept[:, None] + slope[:, None] * tau[None, :] + noise


def generate(spec: ModelSpec, params: ParameterSet, options: SimOptions) -> PanelDataset:
    """Simulate ``options.n`` subjects from the structural equations.

    Interaction in the growth-exposure model is allowed: generation only needs
    the forward recursion.  A configured confounder is added to the latent
    equations and not returned.
    """
    check(spec, params, allow_degenerate=True)
    n = int(options.n)
    if n == 0:
        return PanelDataset.empty(spec)
    rng = np.random.default_rng(options.seed)
    tau = np.asarray(spec.time_scores)
    p = spec.covariate_dim
    c = rng.standard_normal((n, p))
    if spec.is_growth:
        nu_x = _draw_pair(rng, params.psi_x, n)
        x_lat = np.column_stack([params.rho0 + nu_x[:, 0], params.lambda0 + nu_x[:, 1]])
        exposure = None
    else:
        exposure = (rng.random(n) < options.p_x).astype(float)
        x_lat = exposure
    nu_m = _draw_pair(rng, params.psi_m, n)
    nu_y = _draw_pair(rng, params.psi_y, n)
    u = rng.standard_normal(n)
    conf = options.confounder or Confounder()
    im, sm = mediator_latents(params, x_lat, c, nu_m)
    im = im + conf.effect_on_mediator[0] * u
    sm = sm + conf.effect_on_mediator[1] * u
    iy, sy = outcome_latents(params, x_lat, im, sm, c, nu_y)
    iy = iy + conf.effect_on_outcome[0] * u
    sy = sy + conf.effect_on_outcome[1] * u
    if spec.is_growth:
        exposure = _series(x_lat[:, 0], x_lat[:, 1], tau, params.sigma2_x, rng)
    med = _series(im, sm, tau, params.sigma2_m, rng)
    out = _series(iy, sy, tau, params.sigma2_y, rng)
    if options.missing_rate > 0:
        for arr in ([exposure] if spec.is_growth else []) + [med, out]:
            arr[rng.random(arr.shape) < options.missing_rate] = np.nan
    ids = tuple(f"s{i:06d}" for i in range(n))
    return PanelDataset(ids, exposure, med, out, c)


@dataclass(frozen=True)
class OracleResult:
    nde: float
    nie: float
    nde_mc_se: float
    nie_mc_se: float
    total: float
    total_mc_se: float
    n_mc: int
    seed: int


def _mean_se(draws):
    n = draws.size
    se = float(draws.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(draws.mean()), se


def counterfactual_oracle(spec: ModelSpec, params: ParameterSet, t: float, contrast: Contrast,
                          n_mc: int, seed: int, marginal_c: bool = False) -> OracleResult:
    """Monte-Carlo natural direct/indirect effects at time ``t``.

    Each draw is one unit: its mediator and outcome disturbances are sampled
    once and shared across all counterfactual arms.  By default covariates are
    held at the contrast's value; ``marginal_c`` draws them from N(0, I).
    """
    if int(n_mc) != n_mc or n_mc < 1:
        raise ValidationError(["n_mc must be a positive integer"])
    check(spec, params, allow_degenerate=True)
    rng = np.random.default_rng(seed)
    n = int(n_mc)
    p = spec.covariate_dim
    if marginal_c:
        c = rng.standard_normal((n, p))
    else:
        c = np.broadcast_to(contrast.covariates(p), (n, p))
    nu_m = _draw_pair(rng, params.psi_m, n)
    nu_y = _draw_pair(rng, params.psi_y, n)
    eps_y = rng.standard_normal(n) * np.sqrt(np.mean(params.sigma2_y))
    if spec.is_growth:
        if len(contrast.x) != 2:
            raise ValidationError(["growth-exposure contrast needs (x1, x1*, x2, x2*)"])
        x = np.broadcast_to(np.array(contrast.x), (n, 2))
        xs = np.broadcast_to(np.array(contrast.x_star), (n, 2))
    else:
        if len(contrast.x) != 1:
            raise ValidationError(["binary-exposure contrast needs (x, x*)"])
        x = np.full(n, contrast.x[0])
        xs = np.full(n, contrast.x_star[0])

    def y(x_arm, m_arm):
        im, sm = mediator_latents(params, m_arm, c, nu_m)
        iy, sy = outcome_latents(params, x_arm, im, sm, c, nu_y)
        return iy + sy * t + eps_y

    y_x_mx = y(x, x)
    y_x_mxs = y(x, xs)
    y_xs_mxs = y(xs, xs)
    nde, nde_se = _mean_se(y_x_mxs - y_xs_mxs)
    nie, nie_se = _mean_se(y_x_mx - y_x_mxs)
    tot, tot_se = _mean_se(y_x_mx - y_xs_mxs)
    return OracleResult(nde, nie, nde_se, nie_se, tot, tot_se, n, int(seed))


@dataclass
class RecoverySummary:
    names: tuple[str, ...] = ()
    truth: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(0))
    empirical_sd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_se: np.ndarray = field(default_factory=lambda: np.zeros(0))
    coverage: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nie_t: float = 1.0
    nie_truth: float = float("nan")
    nie_empirical_sd: float = float("nan")
    nie_mean_se: float = float("nan")
    nie_coverage: float = float("nan")
    reps: int = 0
    used: int = 0
    nonconverged: int = 0
    failed: int = 0
    seed: int = 0

    def as_dict(self) -> dict:
        return {
            "reps": self.reps, "used": self.used, "nonconverged": self.nonconverged,
            "failed": self.failed, "seed": self.seed,
            "coordinates": {
                n: {"truth": float(t), "bias": float(b), "empirical_sd": float(s),
                    "mean_se": float(m), "coverage": float(c)}
                for n, t, b, s, m, c in zip(self.names, self.truth, self.bias,
                                            self.empirical_sd, self.mean_se, self.coverage)
            },
            "nie": {"t": self.nie_t, "truth": self.nie_truth, "empirical_sd": self.nie_empirical_sd,
                    "mean_se": self.nie_mean_se, "coverage": self.nie_coverage},
        }


def recovery_study(spec: ModelSpec, params_true: ParameterSet, n: int, reps: int, seed: int,
                   *, p_x: float = 0.5, nie_t: float = 1.0, contrast: Contrast | None = None,
                   fit_options=None, level: float = 0.95, progress=None) -> RecoverySummary:
    """Repeated generate-then-fit cycles summarizing the structural estimates.

    Non-converged and numerically failed replications are excluded and counted.
    """
    from scipy import stats as st

    from .effects import nie as nie_effect
    from .estimator import ConvergenceWarning, SingularInformationError, fit
    from .inference import delta_se, effect_gradient

    if reps == 0:
        return RecoverySummary(seed=seed)
    import warnings

    k = len(params_true.layout.structural_names)
    truth = np.asarray(list(params_true.structural_dict().values()))
    if contrast is None:
        contrast = (Contrast.growth(1.0, 0.0, 0.0, 0.0) if spec.is_growth
                    else Contrast.binary(1.0, 0.0))
    nie_true = nie_effect(params_true, nie_t, contrast)
    z = st.norm.ppf(0.5 + level / 2)
    seeds = np.random.SeedSequence(seed).generate_state(reps, dtype=np.uint64)
    est, ses, nie_est, nie_ses = [], [], [], []
    nonconv = failed = 0
    for r in range(reps):
        data = generate(spec, params_true, SimOptions(n=n, seed=int(seeds[r]), p_x=p_x))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                res = fit(spec, data, fit_options)
        except SingularInformationError:
            failed += 1
            continue
        if not res.converged:
            nonconv += 1
            continue
        est.append(res.theta_flat[:k])
        ses.append(res.se[:k])
        nie_est.append(nie_effect(res.theta_hat, nie_t, contrast))
        grad = effect_gradient("NIE", res.theta_hat, nie_t, contrast)
        nie_ses.append(delta_se(grad, res.structural_vcov, contrast))
        if progress is not None:
            progress(r)
    used = len(est)
    out = RecoverySummary(names=params_true.layout.structural_names, truth=truth, reps=reps,
                          used=used, nonconverged=nonconv, failed=failed, seed=seed, nie_t=nie_t,
                          nie_truth=nie_true)
    if used == 0:
        return out
    est, ses = np.array(est), np.array(ses)
    out.bias = est.mean(axis=0) - truth
    out.empirical_sd = est.std(axis=0, ddof=1) if used > 1 else np.zeros(k)
    out.mean_se = ses.mean(axis=0)
    out.coverage = (np.abs(est - truth) <= z * ses).mean(axis=0)
    nie_est, nie_ses = np.array(nie_est), np.array(nie_ses)
    out.nie_empirical_sd = float(nie_est.std(ddof=1)) if used > 1 else 0.0
    out.nie_mean_se = float(nie_ses.mean())
    out.nie_coverage = float((np.abs(nie_est - nie_true) <= z * nie_ses).mean())
    return out
