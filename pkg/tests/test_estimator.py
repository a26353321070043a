import warnings

import numpy as np
import pytest

from lgcmed import (
    FitOptions,
    ModelKind,
    ModelSpec,
    NotIdentifiedError,
    PanelDataset,
    SimOptions,
    SingularInformationError,
    UnsupportedModelError,
    ValidationError,
    example_params,
    fit,
    generate,
    observed_information,
    pack,
    random_params,
)
from lgcmed.estimator import (
    ConvergenceWarning,
    constrain,
    constrain_flat,
    constrain_grad,
    fd_gradient,
    fd_hessian,
    fd_jacobian_sym,
    unconstrain,
)


@pytest.fixture(scope="module")
def m1_fit():
    spec = ModelSpec(ModelKind.BINARY, True, covariate_dim=1)
    truth = example_params(spec)
    data = generate(spec, truth, SimOptions(n=2000, seed=7))
    return spec, truth, data, fit(spec, data)


def test_constrain_examples():
    spec = ModelSpec()
    lay = example_params(spec).layout
    raw = np.zeros(len(lay))
    p = constrain(spec, raw)
    assert p.sigma2_m[0] == 1.0 and p.sigma2_y[0] == 1.0
    assert np.array_equal(p.psi_m, np.eye(2)) and np.array_equal(p.psi_y, np.eye(2))


def test_constrain_round_trip():
    rng = np.random.default_rng(0)
    for kind in ModelKind:
        spec = ModelSpec(kind, False, covariate_dim=1)
        p = random_params(spec, rng)
        back = constrain(spec, unconstrain(spec, p))
        assert np.allclose(pack(spec, back), pack(spec, p), rtol=1e-12, atol=1e-12)
        raw = rng.normal(size=len(p.layout))
        assert np.allclose(unconstrain(spec, constrain(spec, raw)), raw, atol=1e-12)


def test_constrain_grad_chain_rule():
    rng = np.random.default_rng(1)
    spec = ModelSpec(ModelKind.GROWTH)
    raw = rng.normal(size=len(example_params(spec).layout))
    w = rng.normal(size=raw.size)
    # gradient of w . constrain(raw) two ways
    num = fd_gradient(lambda r: w @ constrain_flat(spec, r), raw)
    assert np.allclose(constrain_grad(spec, raw, w), num, rtol=1e-7, atol=1e-8)


def test_fd_hessian_quadratic_oracle():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(6, 6))
    H = A @ A.T + np.eye(6)
    b = rng.normal(size=6)
    x0 = rng.normal(size=6) * 3
    est = fd_hessian(lambda x: 0.5 * x @ H @ x + b @ x + 1.0, x0)
    assert np.max(np.abs(est - H)) <= 1e-5 * np.max(np.abs(H))
    est = fd_jacobian_sym(lambda x: H @ x + b, x0)
    assert np.max(np.abs(est - H)) <= 1e-5 * np.max(np.abs(H))


def test_fit_recovers_truth(m1_fit):
    spec, truth, data, res = m1_fit
    assert res.converged
    k = res.layout.n_structural
    z = (res.theta_flat[:k] - pack(spec, truth)[:k]) / res.se[:k]
    assert np.mean(np.abs(z) <= 4) >= 0.9
    assert res.grad_norm <= 1e-6


def test_fit_result_invariants(m1_fit):
    spec, truth, data, res = m1_fit
    V = res.vcov
    assert V.shape == (len(res.layout), len(res.layout))
    assert np.array_equal(V, V.T) or np.max(np.abs(V - V.T)) <= 1e-12 * np.max(np.abs(V))
    assert np.all(np.diag(V) >= 0)
    assert res.loglik >= res.start_loglik
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 0)
    assert res.dropped_subjects == 0 and res.n_subjects == 2000
    assert res.structural_vcov.shape == (res.layout.n_structural,) * 2
    assert set(res.summary()) == set(res.layout.names)


def test_information_properties(m1_fit):
    spec, truth, data, res = m1_fit
    info = observed_information(spec, res.theta_hat, data)
    w = np.linalg.eigvalsh(info)
    assert np.max(np.abs(info - info.T)) == 0.0
    assert w.min() >= -1e-6 * np.abs(w).max()
    copy = PanelDataset([f"z{i}" for i in data.ids], data.exposure, data.mediator, data.outcome, data.covariates)
    info2 = observed_information(spec, res.theta_hat, PanelDataset.concat([data, copy]))
    assert np.max(np.abs(info2 - 2 * info)) <= 1e-6 * np.max(np.abs(info))


def test_fit_permutation_invariant(m1_fit):
    spec, truth, data, res = m1_fit
    perm = np.random.default_rng(3).permutation(len(data))
    res2 = fit(spec, data.take(perm))
    assert np.max(np.abs(res2.theta_flat - res.theta_flat)) <= 1e-8


def test_fit_deterministic():
    spec = ModelSpec()
    data = generate(spec, example_params(spec), SimOptions(n=300, seed=4))
    a, b = fit(spec, data), fit(spec, data)
    assert np.array_equal(a.theta_flat, b.theta_flat) and np.array_equal(a.vcov, b.vcov)


def test_fit_growth_model():
    spec = ModelSpec(ModelKind.GROWTH, False, covariate_dim=1)
    truth = example_params(spec)
    data = generate(spec, truth, SimOptions(n=1500, seed=21, missing_rate=0.1))
    res = fit(spec, data)
    assert res.converged
    z = (res.theta_flat - pack(spec, truth)) / res.se
    assert np.mean(np.abs(z) <= 4) >= 0.9


def test_user_start():
    spec = ModelSpec()
    truth = example_params(spec)
    data = generate(spec, truth, SimOptions(n=400, seed=9))
    a = fit(spec, data)
    b = fit(spec, data, FitOptions(start=truth))
    assert np.allclose(a.theta_flat, b.theta_flat, atol=1e-4)


def test_nonconvergence_returns_partial_result():
    spec = ModelSpec(interaction=True)
    data = generate(spec, example_params(spec), SimOptions(n=300, seed=2))
    with pytest.warns(ConvergenceWarning):
        res = fit(spec, data, FitOptions(max_iterations=2))
    assert not res.converged and res.iterations <= 2


def test_preconditions():
    spec3 = ModelSpec(time_scores=(0, 1))
    with pytest.raises(NotIdentifiedError, match="not-identified"):
        fit(spec3, generate(spec3, example_params(spec3), SimOptions(n=50)))
    spec = ModelSpec(ModelKind.GROWTH, True)
    with pytest.raises(UnsupportedModelError):
        fit(spec, generate(spec, example_params(spec), SimOptions(n=50)))
    spec = ModelSpec()
    with pytest.raises(ValidationError):
        fit(spec, generate(spec, example_params(spec), SimOptions(n=5)))
    with pytest.raises(ValidationError):
        FitOptions(grad_tolerance=0)


def test_singular_information():
    n = 20
    data = PanelDataset([f"a{i}" for i in range(n)], np.ones(n), np.tile([1.0, 2, 3, 4], (n, 1)),
                        np.tile([0.5, 1, 1.5, 2.5], (n, 1)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        with pytest.raises(SingularInformationError, match="singular-information") as exc:
            fit(ModelSpec(), data)
    assert exc.value.result is not None and exc.value.result.vcov is None


@pytest.mark.slow
def test_se_ratio_quadrupled_sample():
    spec = ModelSpec()
    truth = example_params(spec)
    reps = 20
    ratios = []
    for r in range(reps):
        small = fit(spec, generate(spec, truth, SimOptions(n=1000, seed=1000 + r)))
        large = fit(spec, generate(spec, truth, SimOptions(n=4000, seed=5000 + r)))
        k = small.layout.n_structural
        ratios.append(large.se[:k] / small.se[:k])
    mean_ratio = np.mean(ratios, axis=0)
    assert np.all((mean_ratio >= 0.4) & (mean_ratio <= 0.6))
