"""Implied Gaussian moments of the observed series and the FIML log-likelihood.

Latent ordering is ``(I_M, S_M, I_Y, S_Y)`` for the binary-exposure model and
``(I_X, S_X, I_M, S_M, I_Y, S_Y)`` for the growth-exposure model.  Observed
ordering stacks the processes in the same order, each over all occasions.

The binary-exposure model is handled conditionally on ``x`` and ``c``; with
``x`` fixed the interaction terms ``x * I_M`` are linear in the latents and the
model stays Gaussian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import (
    ModelSpec,
    NumericalFailure,
    PanelDataset,
    ParameterSet,
    UnsupportedModelError,
    check,
    theta_layout,
)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LatentSystem:
    """``eta = alpha + B eta + zeta``, ``y = Lambda eta + eps``.

    ``alpha_c`` maps covariates into the latent intercepts and is already
    folded into ``alpha`` for the covariate value the system was built at.
    """

    alpha: np.ndarray
    B: np.ndarray
    Psi: np.ndarray
    Lambda: np.ndarray
    Theta: np.ndarray
    alpha_c: np.ndarray

    def total_effects(self) -> np.ndarray:
        """``(I - B)^{-1}`` via its terminating Neumann series (B is nilpotent)."""
        K = self.B.shape[0]
        out = np.eye(K) + self.B
        if K == 6:
            out = out + self.B @ self.B
        return out


def loading_matrix(spec: ModelSpec) -> np.ndarray:
    T = spec.n_occasions
    P = len(spec.processes)
    lam = np.zeros((P * T, 2 * P))
    tau = np.asarray(spec.time_scores)
    for k in range(P):
        lam[k * T:(k + 1) * T, 2 * k] = 1.0
        lam[k * T:(k + 1) * T, 2 * k + 1] = tau
    return lam


def residual_variances(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    T = spec.n_occasions
    sig = {"X": params.sigma2_x, "M": params.sigma2_m, "Y": params.sigma2_y}
    return np.concatenate([np.broadcast_to(sig[p], (T,)) for p in spec.processes])


def _psi(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    blocks = [params.psi_m, params.psi_y]
    if spec.is_growth:
        blocks.insert(0, params.psi_x)
    return linalg.block_diag(*blocks)


def _structure(spec: ModelSpec, params: ParameterSet, x: float):
    """Intercept vector at ``x`` (without covariates), ``B`` and covariate map."""
    d, b, f, g = params.delta, params.beta, params.phi, params.gamma
    p = spec.covariate_dim
    if spec.is_growth:
        alpha = np.array([params.rho0, params.lambda0, d[0], b[0], f[0], g[0]])
        B = np.zeros((6, 6))
        B[2, :2] = d[1], d[2]
        B[3, :2] = b[1], b[2]
        B[4, :4] = f[1], f[2], f[3], f[4]
        B[5, :4] = g[1], g[2], g[3], g[4]
        alpha_c = np.zeros((6, p))
        alpha_c[2:] = params.delta_c, params.beta_c, params.phi_c, params.gamma_c
        return alpha, B, alpha_c
    alpha = np.array([d[0] + d[1] * x, b[0] + b[1] * x, f[0] + f[1] * x, g[0] + g[1] * x])
    B = np.zeros((4, 4))
    B[2, 0] = f[2] + f[4] * x
    B[2, 1] = f[3] + f[5] * x
    B[3, 0] = g[2] + g[4] * x
    B[3, 1] = g[3] + g[5] * x
    alpha_c = np.vstack([params.delta_c, params.beta_c, params.phi_c, params.gamma_c]).reshape(4, p)
    return alpha, B, alpha_c


def _require_gaussian(spec: ModelSpec):
    if spec.is_growth and spec.interaction:
        raise UnsupportedModelError("model2-interaction-likelihood-unsupported")


def latent_system(spec: ModelSpec, params: ParameterSet, x: float | None = None,
                  c=None) -> LatentSystem:
    """Matrices of the latent structural system at exposure ``x`` and covariates ``c``.

    ``x`` is required for the binary-exposure model and ignored otherwise.
    """
    _require_gaussian(spec)
    check(spec, params)
    if not spec.is_growth and x is None:
        raise ValueError("the binary-exposure model needs an exposure value x")
    c = np.zeros(spec.covariate_dim) if c is None else np.asarray(c, dtype=float)
    alpha, B, alpha_c = _structure(spec, params, 0.0 if x is None else float(x))
    return LatentSystem(
        alpha=alpha + alpha_c @ c,
        B=B,
        Psi=_psi(spec, params),
        Lambda=loading_matrix(spec),
        Theta=np.diag(residual_variances(spec, params)),
        alpha_c=alpha_c,
    )


def implied_moments(spec: ModelSpec, params: ParameterSet, x: float | None = None, c=None):
    """Mean vector and covariance matrix of the stacked observed series."""
    sys = latent_system(spec, params, x, c)
    LT = sys.Lambda @ sys.total_effects()
    mu = LT @ sys.alpha
    sigma = LT @ sys.Psi @ LT.T + sys.Theta
    return mu, 0.5 * (sigma + sigma.T)


def subject_loglik(mu, sigma, values, mask=None) -> float:
    """Gaussian log-density of ``values`` restricted to observed coordinates.

    ``mask`` defaults to the non-NaN entries of ``values``.
    """
    values = np.asarray(values, dtype=float)
    mask = ~np.isnan(values) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("subject has no observed coordinates")
    idx = np.flatnonzero(mask)
    s = np.asarray(sigma)[np.ix_(idx, idx)]
    r = values[idx] - np.asarray(mu)[idx]
    try:
        L = linalg.cholesky(s, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalFailure("covariance of observed coordinates is not positive definite") from exc
    z = linalg.solve_triangular(L, r, lower=True)
    return float(-0.5 * (idx.size * LOG_2PI + 2.0 * np.log(np.diag(L)).sum() + z @ z))


@dataclass(frozen=True)
class _Group:
    x: float
    obs: np.ndarray          # observed coordinate indices
    n: int
    ybar: np.ndarray
    wbar: np.ndarray         # mean of exogenous regressors
    Cyy: np.ndarray          # centered cross-products
    Cyw: np.ndarray
    Cww: np.ndarray


class SufficientStats:
    """Data reduced to per-group moments for fast repeated likelihood evaluation.

    Subjects are grouped by observed-coordinate pattern (and by exposure value
    when the covariance depends on it).  Within a group the log-likelihood
    depends on the data only through centered cross-products of the observed
    series and the exogenous regressors.  Groups and rows are put in a
    canonical order so the result does not depend on subject order.
    """

    def __init__(self, spec: ModelSpec, data: PanelDataset):
        _require_gaussian(spec)
        data.check_against(spec)
        self.spec = spec
        Y = data.observed_matrix() if len(data) else np.zeros((0, spec.n_observed))
        C = data.covariates if len(data) else np.zeros((0, spec.covariate_dim))
        mask = ~np.isnan(Y)
        keep = mask.any(axis=1)
        if not spec.is_growth:
            x = np.asarray(data.exposure, dtype=float).reshape(-1)
            keep &= ~np.isnan(x)
        else:
            x = np.zeros(len(data))
        self.dropped = int(len(data) - keep.sum())
        self.n_subjects = int(keep.sum())
        Y, C, x, mask = Y[keep], C[keep], x[keep], mask[keep]
        # Covariance depends on x only through the interaction terms.
        by_x = not spec.is_growth and spec.interaction
        if spec.is_growth:
            W = C
        elif by_x:
            W = C
        else:
            W = np.column_stack([x, C])
        self.regress_on_x = not spec.is_growth and not by_x
        keys = {}
        for i in range(Y.shape[0]):
            key = (x[i] if by_x else 0.0, mask[i].tobytes())
            keys.setdefault(key, []).append(i)
        groups = []
        for key in sorted(keys, key=lambda k: (k[0], k[1])):
            rows = np.array(keys[key])
            obs = np.flatnonzero(mask[rows[0]])
            Yg = Y[np.ix_(rows, obs)]
            Wg = W[rows]
            block = np.column_stack([Yg, Wg])
            order = np.lexsort(block.T[::-1]) if block.shape[1] else np.arange(len(rows))
            Yg, Wg = Yg[order], Wg[order]
            ybar = Yg.mean(axis=0)
            wbar = Wg.mean(axis=0) if Wg.shape[1] else np.zeros(0)
            Yc, Wc = Yg - ybar, Wg - wbar
            groups.append(_Group(key[0], obs, len(rows), ybar, wbar,
                                 Yc.T @ Yc, Yc.T @ Wc, Wc.T @ Wc))
        self.groups = groups
        self._lambda = loading_matrix(spec)

    def loglik(self, params: ParameterSet) -> float:
        """Total log-likelihood; ``-inf`` if any implied covariance is not PD."""
        try:
            return self._evaluate(params, False)[0]
        except NumericalFailure:
            return -math.inf

    def loglik_and_grad(self, params: ParameterSet):
        """Log-likelihood and its analytic gradient over the flat layout.

        Raises :class:`NumericalFailure` if an implied covariance is not PD.
        """
        return self._evaluate(params, True)

    def _loglik(self, params: ParameterSet) -> float:
        return self._evaluate(params, False)[0]

    def _pieces(self, params, x, lam, psi, theta):
        spec = self.spec
        alpha, B, alpha_c = _structure(spec, params, x)
        K = B.shape[0]
        Tm = np.eye(K) + B
        if K == 6:
            Tm = Tm + B @ B
        LT = lam @ Tm
        sigma = LT @ psi @ LT.T
        sigma[np.diag_indices_from(sigma)] += theta
        if self.regress_on_x:
            # alpha(x) = alpha(0) + x * d alpha/dx
            Aw = np.column_stack([_structure(spec, params, 1.0)[0] - alpha, alpha_c])
        else:
            Aw = alpha_c
        return alpha, B, Tm, Aw, sigma, LT @ alpha, LT @ Aw

    def _evaluate(self, params: ParameterSet, want_grad: bool):
        spec = self.spec
        lam = self._lambda
        psi = _psi(spec, params)
        theta = residual_variances(spec, params)
        D = lam.shape[0]
        cache = {}
        grads = {}
        total = 0.0
        for g in self.groups:
            if g.x not in cache:
                cache[g.x] = self._pieces(params, g.x, lam, psi, theta)
                if want_grad:
                    q = cache[g.x][6].shape[1]
                    grads[g.x] = [np.zeros((D, D)), np.zeros(D), np.zeros((D, q))]
            sigma, a, Kw = cache[g.x][4:]
            o = g.obs
            s = sigma[np.ix_(o, o)]
            Ko = Kw[o]
            e = g.ybar - a[o] - Ko @ g.wbar
            KC = Ko @ g.Cyw.T
            R = g.Cyy - KC - KC.T + Ko @ g.Cww @ Ko.T + g.n * np.outer(e, e)
            try:
                L = linalg.cholesky(s, lower=True, check_finite=False)
            except linalg.LinAlgError as exc:
                raise NumericalFailure("implied covariance not positive definite") from exc
            if not np.all(np.isfinite(L)):
                raise NumericalFailure("implied covariance not finite")
            logdet = 2.0 * np.log(np.diag(L)).sum()
            if want_grad:
                s_inv = linalg.cho_solve((L, True), np.eye(o.size), check_finite=False)
                quad = float(np.sum(s_inv * R))
                G = 0.5 * (s_inv @ R @ s_inv - g.n * s_inv)
                acc = grads[g.x]
                acc[0][np.ix_(o, o)] += G
                acc[1][o] += g.n * (s_inv @ e)
                acc[2][o] += s_inv @ (g.Cyw - Ko @ g.Cww + g.n * np.outer(e, g.wbar))
            else:
                Linv_R = linalg.solve_triangular(L, R, lower=True, check_finite=False)
                quad = np.trace(linalg.solve_triangular(L, Linv_R.T, lower=True, check_finite=False))
            total += -0.5 * (g.n * (o.size * LOG_2PI + logdet) + quad)
        if not want_grad:
            return float(total), None
        return float(total), self._chain(params, cache, grads)

    def _chain(self, params, cache, grads):
        """Push d loglik / d(Sigma, mean, covariate map) back to the flat layout."""
        spec = self.spec
        lay = theta_layout(spec)
        out = np.zeros(len(lay))
        idx = lay.index
        lam = self._lambda
        T = spec.n_occasions
        p = spec.covariate_dim
        g_theta = np.zeros(lam.shape[0])
        g_psi = np.zeros((spec.n_latent, spec.n_latent))
        for x, (G, ga, gK) in grads.items():
            alpha, B, Tm, Aw = cache[x][:4]
            H = lam.T @ G @ lam
            ha = lam.T @ ga
            HK = lam.T @ gK
            g_theta += np.diag(G)
            g_psi += Tm.T @ H @ Tm
            g_alpha = Tm.T @ ha
            g_Aw = Tm.T @ HK
            psi = _psi(spec, params)
            g_B = (2.0 * Tm.T @ H @ Tm @ psi @ Tm.T
                   + Tm.T @ np.outer(ha, alpha) @ Tm.T
                   + Tm.T @ HK @ Aw.T @ Tm.T)
            if spec.is_growth:
                g_alpha_c = g_Aw
                out[idx("rho_0")] += g_alpha[0]
                out[idx("lambda_0")] += g_alpha[1]
                for row, blk in zip(range(2, 6), ("delta", "beta", "phi", "gamma")):
                    out[idx(f"{blk}_0")] += g_alpha[row]
                for k, name in ((0, "delta_1"), (1, "delta_2")):
                    out[idx(name)] += g_B[2, k]
                for k, name in ((0, "beta_1"), (1, "beta_2")):
                    out[idx(name)] += g_B[3, k]
                for k in range(4):
                    out[idx(f"phi_{k + 1}")] += g_B[4, k]
                    out[idx(f"gamma_{k + 1}")] += g_B[5, k]
                cov_rows = {"delta": (2, 3), "beta": (3, 3), "phi": (4, 9), "gamma": (5, 9)}
            else:
                if self.regress_on_x:
                    g_slope, g_alpha_c = g_Aw[:, 0], g_Aw[:, 1:]
                else:
                    g_slope, g_alpha_c = np.zeros(4), g_Aw
                for row, blk in enumerate(("delta", "beta", "phi", "gamma")):
                    out[idx(f"{blk}_0")] += g_alpha[row]
                    out[idx(f"{blk}_1")] += g_alpha[row] * x + g_slope[row]
                entries = {"phi": (2, ((0, 2, 4), (1, 3, 5))), "gamma": (3, ((0, 2, 4), (1, 3, 5)))}
                for blk, (row, cols) in entries.items():
                    for col, k_main, k_int in cols:
                        out[idx(f"{blk}_{k_main}")] += g_B[row, col]
                        if spec.interaction:
                            out[idx(f"{blk}_{k_int}")] += g_B[row, col] * x
                cov_rows = {"delta": (0, 2), "beta": (1, 2), "phi": (2, 6), "gamma": (3, 6)}
            for blk, (row, k) in cov_rows.items():
                for j in range(p):
                    out[idx(f"{blk}_{k}[{j + 1}]")] += g_alpha_c[row, j]
        for b, proc in enumerate(spec.processes):
            block = g_theta[b * T:(b + 1) * T]
            if spec.n_residual_per_process == 1:
                out[idx(f"sigma2_{proc}")] = block.sum()
            else:
                for k in range(T):
                    out[idx(f"sigma2_{proc}[{k + 1}]")] = block[k]
            i, j = 2 * b, 2 * b + 1
            out[idx(f"psi_{proc}_11")] = g_psi[i, i]
            out[idx(f"psi_{proc}_21")] = g_psi[i, j] + g_psi[j, i]
            out[idx(f"psi_{proc}_22")] = g_psi[j, j]
        return out


def total_loglik(spec: ModelSpec, params: ParameterSet, data: PanelDataset) -> float:
    """Sum of subject log-likelihoods; subjects without observations are skipped."""
    check(spec, params)
    stats = SufficientStats(spec, data)
    return stats._loglik(params)
