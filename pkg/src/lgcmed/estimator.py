"""Maximum-likelihood fitting of the parallel-process growth models."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .core import (
    ModelSpec,
    NotIdentifiedError,
    NumericalFailure,
    PanelDataset,
    ParameterSet,
    ThetaLayout,
    UnsupportedModelError,
    ValidationError,
    check,
    pack,
    theta_layout,
    unpack,
)
from .likelihood import SufficientStats

FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)
# second differences of function values need a wider step than first differences
FD_STEP2 = np.finfo(float).eps ** 0.25


class SingularInformationError(NumericalFailure):
    """Observed information could not be inverted; ``result`` has ``vcov=None``."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConvergenceWarning(UserWarning):
    pass


class Start(str, enum.Enum):
    DEFAULT = "Default"
    USER = "UserSupplied"


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 500
    grad_tolerance: float = 1e-6
    rel_f_tolerance: float = 1e-10
    start: ParameterSet | None = None

    def __post_init__(self):
        problems = []
        if self.grad_tolerance <= 0 or self.rel_f_tolerance <= 0:
            problems.append("tolerances must be positive")
        if self.max_iterations < 1:
            problems.append("max_iterations must be at least 1")
        if problems:
            raise ValidationError(problems)

    @property
    def start_kind(self) -> Start:
        return Start.DEFAULT if self.start is None else Start.USER


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: ParameterSet
    vcov: np.ndarray | None
    loglik: float
    converged: bool
    iterations: int
    dropped_subjects: int
    layout: ThetaLayout
    start_loglik: float = math.nan
    grad_norm: float = math.nan
    n_subjects: int = 0
    message: str = ""
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def theta_flat(self) -> np.ndarray:
        return pack(self.theta_hat.spec, self.theta_hat)

    @property
    def se(self) -> np.ndarray:
        if self.vcov is None:
            return np.full(len(self.layout), np.nan)
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def structural_vcov(self) -> np.ndarray | None:
        if self.vcov is None:
            return None
        k = self.layout.n_structural
        return self.vcov[:k, :k]

    def summary(self) -> dict[str, tuple[float, float]]:
        return dict(zip(self.layout.names, zip(self.theta_flat.tolist(), self.se.tolist())))


# -- reparameterization ------------------------------------------------------

def _variance_slices(spec: ModelSpec):
    lay = theta_layout(spec)
    k = lay.n_structural
    n_sig = len(spec.processes) * spec.n_residual_per_process
    sig = np.arange(k, k + n_sig)
    psi = np.arange(k + n_sig, len(lay)).reshape(-1, 3)
    return sig, psi


def constrain(spec: ModelSpec, raw) -> ParameterSet:
    """Map an unconstrained vector to parameters.

    Structural entries pass through; residual variances are ``exp(raw)``;
    each Psi block is ``L L'`` with ``L = [[exp(a), 0], [b, exp(c)]]``.
    """
    return unpack(spec, constrain_flat(spec, raw))


def constrain_flat(spec: ModelSpec, raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    flat = raw.copy()
    sig, psi = _variance_slices(spec)
    flat[sig] = np.exp(raw[sig])
    for i11, i21, i22 in psi:
        l11, l21, l22 = math.exp(raw[i11]), raw[i21], math.exp(raw[i22])
        flat[i11] = l11 * l11
        flat[i21] = l21 * l11
        flat[i22] = l21 * l21 + l22 * l22
    return flat


def constrain_grad(spec: ModelSpec, raw, grad_flat) -> np.ndarray:
    """Chain a gradient over natural-scale parameters back to the raw vector."""
    raw = np.asarray(raw, dtype=float)
    out = np.array(grad_flat, dtype=float)
    sig, psi = _variance_slices(spec)
    out[sig] = grad_flat[sig] * np.exp(raw[sig])
    for i11, i21, i22 in psi:
        ea, b, ec = math.exp(raw[i11]), raw[i21], math.exp(raw[i22])
        g11, g21, g22 = grad_flat[i11], grad_flat[i21], grad_flat[i22]
        out[i11] = g11 * 2.0 * ea * ea + g21 * b * ea
        out[i21] = g21 * ea + g22 * 2.0 * b
        out[i22] = g22 * 2.0 * ec * ec
    return out


def unconstrain(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    return unconstrain_flat(spec, pack(spec, params))


def unconstrain_flat(spec: ModelSpec, flat) -> np.ndarray:
    flat = np.asarray(flat, dtype=float)
    raw = flat.copy()
    sig, psi = _variance_slices(spec)
    if np.any(flat[sig] <= 0):
        raise ValidationError(["residual variances must be positive"])
    raw[sig] = np.log(flat[sig])
    for i11, i21, i22 in psi:
        m = np.array([[flat[i11], flat[i21]], [flat[i21], flat[i22]]])
        try:
            L = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise ValidationError(["Ψ block not positive definite"]) from None
        raw[i11], raw[i21], raw[i22] = math.log(L[0, 0]), L[1, 0], math.log(L[1, 1])
    return raw


# -- finite differences ------------------------------------------------------

def fd_steps(x, base: float = FD_STEP) -> np.ndarray:
    return base * np.maximum(1.0, np.abs(np.asarray(x, dtype=float)))


def fd_gradient(f, x, steps=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = fd_steps(x) if steps is None else steps
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


def fd_hessian(f, x, steps=None) -> np.ndarray:
    """Central-difference Hessian of a scalar function, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = fd_steps(x, FD_STEP2) if steps is None else np.asarray(steps, dtype=float)
    f0 = f(x)
    H = np.empty((n, n))
    fp = np.empty(n)
    fm = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        fp[i], fm[i] = f(x + e), f(x - e)
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / (h[i] * h[i])
    for i in range(n):
        for j in range(i):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i], ej[j] = h[i], h[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    return 0.5 * (H + H.T)


def fd_jacobian_sym(grad, x, steps=None) -> np.ndarray:
    """Hessian as the symmetrized central-difference Jacobian of a gradient function."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x) if steps is None else np.asarray(steps, dtype=float)
    H = np.empty((x.size, x.size))
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        H[:, i] = (grad(xp) - grad(xm)) / (xp[i] - xm[i])
    return 0.5 * (H + H.T)


def observed_information(spec: ModelSpec, theta_hat: ParameterSet, data: PanelDataset,
                         stats: SufficientStats | None = None) -> np.ndarray:
    """Negative Hessian of the total log-likelihood in natural-scale parameters.

    Central differences of the analytic score, step ``cbrt(eps) * max(1, |theta|)``,
    symmetrized.
    """
    stats = SufficientStats(spec, data) if stats is None else stats
    x0 = pack(spec, theta_hat)

    def score(flat):
        try:
            return stats.loglik_and_grad(unpack(spec, flat))[1]
        except (NumericalFailure, ValidationError):
            return np.full(flat.size, np.nan)

    info = -fd_jacobian_sym(score, x0)
    if not np.all(np.isfinite(info)):
        raise NumericalFailure("observed information has non-finite entries")
    return info


def invert_information(info: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Inverse of a symmetric information matrix; raises if (near) singular."""
    w = np.linalg.eigvalsh(info)
    top = np.abs(w).max() if w.size else 0.0
    if w.size and (top == 0.0 or w.min() <= rcond * top):
        raise SingularInformationError(
            f"information matrix singular or indefinite (eigenvalue range {w.min():.3g} .. {w.max():.3g})"
        )
    vcov = linalg.inv(info)
    return 0.5 * (vcov + vcov.T)


# -- starting values ---------------------------------------------------------

def _subject_growth(series: np.ndarray, tau: np.ndarray):
    """Per-subject OLS intercept/slope over observed occasions, plus residuals."""
    n = series.shape[0]
    ints = np.full(n, np.nan)
    slopes = np.full(n, np.nan)
    ss, df = 0.0, 0
    for i in range(n):
        ok = ~np.isnan(series[i])
        if ok.sum() < 2:
            continue
        X = np.column_stack([np.ones(ok.sum()), tau[ok]])
        coef, *_ = np.linalg.lstsq(X, series[i, ok], rcond=None)
        ints[i], slopes[i] = coef
        r = series[i, ok] - X @ coef
        ss += r @ r
        df += ok.sum() - 2
    for arr in (ints, slopes):
        arr[np.isnan(arr)] = np.nanmean(arr) if np.any(~np.isnan(arr)) else 0.0
    resid_var = ss / df if df > 0 else 1.0
    return ints, slopes, resid_var


def _ols(y, X):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, y - X @ coef


def _latent_cov(ints, slopes, resid_var, tau, floor=1e-3):
    # Remove the OLS sampling noise from the raw covariance of fitted growth factors.
    X = np.column_stack([np.ones_like(tau), tau])
    noise = resid_var * np.linalg.inv(X.T @ X)
    cov = np.cov(np.vstack([ints, slopes])) - noise
    d = np.maximum(np.diag(cov), floor)
    r = np.clip(cov[0, 1] / np.sqrt(d[0] * d[1]), -0.5, 0.5)
    return np.array([[d[0], r * np.sqrt(d[0] * d[1])], [r * np.sqrt(d[0] * d[1]), d[1]]])


def default_start(spec: ModelSpec, data: PanelDataset) -> ParameterSet:
    """Two-stage least-squares start: per-subject growth factors, then regressions."""
    tau = np.asarray(spec.time_scores)
    C = data.covariates
    one = np.ones(len(data))
    vals = {}
    im, sm, vm = _subject_growth(data.mediator, tau)
    iy, sy, vy = _subject_growth(data.outcome, tau)
    p = spec.covariate_dim
    cnames = lambda blk, k: [f"{blk}_{k}[{j + 1}]" for j in range(p)]
    if spec.is_growth:
        ix, sx, vx = _subject_growth(data.exposure, tau)
        vals["rho_0"], vals["lambda_0"] = ix.mean(), sx.mean()
        Xm = np.column_stack([one, ix, sx, C])
        med_names = lambda blk: [f"{blk}_0", f"{blk}_1", f"{blk}_2"] + cnames(blk, 3)
        Xy = np.column_stack([one, ix, sx, im, sm, C])
        out_names = lambda blk: [f"{blk}_{k}" for k in range(5)] + cnames(blk, 9)
    else:
        x = np.nan_to_num(np.asarray(data.exposure, dtype=float))
        Xm = np.column_stack([one, x, C])
        med_names = lambda blk: [f"{blk}_0", f"{blk}_1"] + cnames(blk, 2)
        cols = [one, x, im, sm]
        names_y = [0, 1, 2, 3]
        if spec.interaction:
            cols += [x * im, x * sm]
            names_y += [4, 5]
        Xy = np.column_stack(cols + [C])
        out_names = lambda blk: [f"{blk}_{k}" for k in names_y] + cnames(blk, 6)
    if spec.is_growth and spec.interaction:
        raise UnsupportedModelError("model2-interaction-likelihood-unsupported")
    coef_im, _ = _ols(im, Xm)
    coef_sm, _ = _ols(sm, Xm)
    coef_iy, _ = _ols(iy, Xy)
    coef_sy, _ = _ols(sy, Xy)
    for blk, coef in (("delta", coef_im), ("beta", coef_sm), ("phi", coef_iy), ("gamma", coef_sy)):
        names = med_names(blk) if blk in ("delta", "beta") else out_names(blk)
        vals.update(zip(names, coef))
    # Disturbance covariances from the growth factors net of their predictable part.
    _, r_im = _ols(im, Xm)
    _, r_sm = _ols(sm, Xm)
    _, r_iy = _ols(iy, Xy)
    _, r_sy = _ols(sy, Xy)
    procs = {"M": (r_im, r_sm, vm), "Y": (r_iy, r_sy, vy)}
    if spec.is_growth:
        procs["X"] = (ix - ix.mean(), sx - sx.mean(), vx)
    lay = theta_layout(spec)
    for proc, (ri, rs, v) in procs.items():
        v = max(v, 1e-3)
        for name in lay.variance_names:
            if name.startswith(f"sigma2_{proc}"):
                vals[name] = v
        psi = _latent_cov(ri, rs, v, tau)
        vals[f"psi_{proc}_11"], vals[f"psi_{proc}_21"], vals[f"psi_{proc}_22"] = psi[0, 0], psi[0, 1], psi[1, 1]
    flat = np.array([vals.get(n, 0.0) for n in lay.names])
    return unpack(spec, np.nan_to_num(flat))


# -- fitting -----------------------------------------------------------------

def _check_fit_preconditions(spec: ModelSpec, data: PanelDataset):
    if spec.is_growth and spec.interaction:
        raise UnsupportedModelError("model2-interaction-likelihood-unsupported")
    if spec.n_occasions < 3:
        raise NotIdentifiedError("not-identified: at least 3 occasions are needed to fit")
    data.check_against(spec)


def fit(spec: ModelSpec, data: PanelDataset, options: FitOptions | None = None) -> FitResult:
    """Maximum-likelihood estimates with observed-information covariance.

    The objective is the mean negative log-likelihood per subject over the
    unconstrained parameters; ``grad_tolerance`` applies to its gradient.
    A run that exhausts ``max_iterations`` is returned with
    ``converged=False`` (and a :class:`ConvergenceWarning`).
    """
    options = FitOptions() if options is None else options
    _check_fit_preconditions(spec, data)
    stats = SufficientStats(spec, data)
    if stats.n_subjects < 10:
        raise ValidationError([f"need at least 10 subjects with data, have {stats.n_subjects}"])
    start = options.start if options.start is not None else default_start(spec, data)
    check(spec, start)
    n = stats.n_subjects
    raw = unconstrain(spec, start)

    def objective(raw):
        try:
            val, grad = stats.loglik_and_grad(constrain(spec, raw))
        except NumericalFailure:
            # rejected point; the line search backs off
            return math.inf, np.zeros_like(raw)
        return -val / n, -constrain_grad(spec, raw, grad) / n

    f_start, g = objective(raw)
    history = [f_start]
    iterations = 0
    message = ""

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    # The relative-change rule is checked on the accepted-step history rather
    # than handed to L-BFGS-B, which would otherwise stop before the gradient
    # rule can be met.
    for _ in range(5):
        if np.max(np.abs(g)) <= options.grad_tolerance:
            break
        budget = options.max_iterations - iterations
        if budget <= 0:
            break
        res = optimize.minimize(
            objective, raw, jac=True, method="L-BFGS-B", callback=record,
            options={"maxiter": budget, "gtol": options.grad_tolerance,
                     "ftol": 1e-15, "maxcor": 20, "maxls": 50},
        )
        iterations += int(res.nit)
        message = str(res.message)
        if res.fun <= objective(raw)[0]:
            raw = res.x
        g = objective(raw)[1]
        if res.status == 1:
            break
        # other exits (line-search trouble) get a restart with fresh curvature memory
    if len(history) >= 2:
        f0, f1 = history[-2], history[-1]
        rel_change = abs(f0 - f1) / max(abs(f0), abs(f1), 1.0)
    else:
        rel_change = 0.0
    grad_norm = float(np.max(np.abs(g)))
    converged = grad_norm <= options.grad_tolerance and rel_change <= options.rel_f_tolerance
    theta_hat = constrain(spec, raw)
    loglik = stats.loglik(theta_hat)
    if not converged:
        warnings.warn(f"nonconvergence after {iterations} iterations: {message}", ConvergenceWarning)
    result = FitResult(
        theta_hat=theta_hat, vcov=None, loglik=loglik, converged=converged,
        iterations=iterations, dropped_subjects=stats.dropped, layout=theta_layout(spec),
        start_loglik=-f_start * n, grad_norm=grad_norm, n_subjects=n,
        message=message, history=tuple(history),
    )
    try:
        info = observed_information(spec, theta_hat, data, stats)
        vcov = invert_information(info)
    except SingularInformationError as exc:
        raise SingularInformationError(f"singular-information: {exc}", result) from None
    except NumericalFailure as exc:
        raise SingularInformationError(f"singular-information: {exc}", result) from None
    return replace(result, vcov=vcov)
