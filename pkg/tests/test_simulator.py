import math

import numpy as np
import pytest

from rfrr.errors import MemoryBudgetExceeded, SolverFailure, ValidationError
from rfrr.special_functions import sample_sphere
from rfrr.spectral_decomposition import ActivationModel, NoiseModel, TargetModel
from rfrr.simulator import (
    SimulationSetup, build_features, empirical_stats, exact_test_error, fit_rfrr,
    gaussian_equiv_run, hadamard_power_form, krr_fit_and_error, krr_kernel, make_dataset,
    quad_form_poly, quad_form, rf_trial, run_trials)

SIGMA = {"monomial": [0, 1.5, 3, 2]}
FSTAR = {"monomial": [0, 0.5, 1.5, 1]}


def _setup(d=8, n=40, p=30, lam=0.5, noise=0.1, sigma=SIGMA, target=FSTAR, model="rf"):
    return SimulationSetup(d, n, p, ActivationModel(sigma, dim=d), TargetModel(target, dim=d),
                           NoiseModel(noise), lam, model=model)


def test_build_features_examples():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    W = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    Z = build_features(X, W, ActivationModel({"monomial": [0, 1]}))
    assert np.allclose(Z * math.sqrt(3), X @ W.T)
    Z = build_features(X, W, ActivationModel({"named": "relu"}))
    assert np.all(Z >= 0)
    with pytest.raises(ValidationError):
        build_features(X, np.ones((2, 3)), ActivationModel({"monomial": [0, 1]}))


def test_ridge_trivial_cases():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((20, 5))
    assert np.all(fit_rfrr(Z, np.zeros(20), 1.0) == 0)
    z = rng.standard_normal((10, 1))
    y = rng.standard_normal(10)
    a = fit_rfrr(z, y, 0.3)
    assert a[0] == pytest.approx(float(z[:, 0] @ y) / (float(z[:, 0] @ z[:, 0]) + 0.3), rel=1e-13)
    with pytest.raises(ValidationError):
        fit_rfrr(Z, np.zeros(20), 0.0)


@pytest.mark.parametrize("n,p", [(30, 10), (10, 30), (25, 25)])
def test_ridge_against_dense_inverse_and_dual(n, p):
    rng = np.random.default_rng(n * 100 + p)
    Z = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    lam = 0.7
    ref = np.linalg.inv(Z.T @ Z + lam * np.eye(p)) @ Z.T @ y
    dual = Z.T @ np.linalg.inv(Z @ Z.T + lam * np.eye(n)) @ y
    a = fit_rfrr(Z, y, lam)
    assert np.abs(a - ref).max() < 1e-10 * max(1, np.abs(ref).max())
    assert np.abs(ref - dual).max() < 1e-10 * max(1, np.abs(ref).max())


def test_ridge_solution_is_a_minimiser():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((15, 8))
    y = rng.standard_normal(15)
    lam = 0.2
    a = fit_rfrr(Z, y, lam)

    def obj(v):
        r = y - Z @ v
        return r @ r + lam * v @ v

    base = obj(a)
    for _ in range(50):
        assert obj(a + 1e-3 * rng.standard_normal(8)) > base


def test_tensor_route_matches_chunked():
    rng = np.random.default_rng(1)
    d, p = 7, 60
    W = sample_sphere(d, 1.0, p, rng)
    a = rng.standard_normal(p)
    c = np.array([0.3, -0.2, 0.9, 0.4])
    assert quad_form(a, W, c, d) == pytest.approx(quad_form_poly(a, W, c, d), rel=1e-12)
    G = W @ W.T
    assert hadamard_power_form(a, W, 3) == pytest.approx(a @ (G**3) @ a, rel=1e-12)
    assert hadamard_power_form(a, W, 0) == pytest.approx(a.sum() ** 2)


def test_exact_risk_simple_limits():
    s = _setup()
    data = make_dataset(s, 0)
    b = s.target_coeffs
    zero = exact_test_error(np.zeros(s.p), data.W, s.target.direction, b, s.activation, s.d)
    assert zero == pytest.approx(float(b @ b), rel=1e-13)
    assert zero == pytest.approx(s.target.function.gegenbauer_projection(s.d, 3)[1], rel=1e-10)
    heavy = fit_rfrr(build_features(data.X, data.W, s.activation), data.y, 1e9)
    R = exact_test_error(heavy, data.W, s.target.direction, b, s.activation, s.d)
    assert R == pytest.approx(zero, rel=1e-6)


def _mc_risk(a, W, beta, act, target, d, points, seed):
    rng = np.random.default_rng(seed)
    tot, tot2, m = 0.0, 0.0, 0
    for s in range(0, points, 50_000):
        X = sample_sphere(d, math.sqrt(d), min(50_000, points - s), rng)
        err = (build_features(X, W, act) @ a - target.function(X @ beta)) ** 2
        tot += err.sum()
        tot2 += (err**2).sum()
        m += len(err)
    mean = tot / m
    return mean, math.sqrt((tot2 / m - mean**2) / m)


@pytest.mark.parametrize("d,sigma", [(6, SIGMA), (10, {"named": "relu"})])
def test_exact_risk_against_monte_carlo(d, sigma):
    s = _setup(d=d, n=40, p=25, sigma=sigma)
    data = make_dataset(s, 2)
    a = fit_rfrr(build_features(data.X, data.W, s.activation), data.y, s.lam)
    R = exact_test_error(a, data.W, s.target.direction, s.target_coeffs, s.activation, d)
    mc, se = _mc_risk(a, data.W, s.target.direction, s.activation, s.target, d, 400_000, 9)
    assert abs(R - mc) < 4 * se + 1e-3 * abs(R)


def test_empirical_stats_and_trace_identity():
    rng = np.random.default_rng(4)
    for n, p in [(40, 15), (15, 40)]:
        Z = rng.standard_normal((n, p)) / math.sqrt(p)
        y = rng.standard_normal(n)
        fit = fit_rfrr(Z, y, 0.3, return_fit=True)
        st = empirical_stats(Z, y, fit.a, 0.3, fit=fit, check_trace=True)
        assert st.trace_gap < 1e-10
        R = np.linalg.inv(Z @ Z.T + 0.3 * np.eye(n))
        assert st.gcv_stat == pytest.approx((0.3 / n * np.trace(R)) ** 2, rel=1e-10)
        assert st.train_error == pytest.approx(np.sum((y - Z @ fit.a) ** 2) / n)
        assert st.norm_stat == pytest.approx(fit.a @ fit.a / n)
    # heavy ridge: nothing fitted, GCV -> 1
    st = empirical_stats(Z, y, fit_rfrr(Z, y, 1e9), 1e9)
    assert st.gcv_stat == pytest.approx(1.0, rel=1e-6)
    assert st.train_error == pytest.approx(y @ y / len(y), rel=1e-6)


def test_trace_identity_catches_inconsistent_factor():
    rng = np.random.default_rng(5)
    Z = rng.standard_normal((20, 10))
    y = rng.standard_normal(20)
    fit = fit_rfrr(Z, y, 0.5, return_fit=True)
    fit.lam = 0.5
    wrong = fit_rfrr(Z, y, 0.9, return_fit=True)
    with pytest.raises(SolverFailure):
        empirical_stats(Z, y, fit.a, 0.5, fit=wrong, check_trace=True)


def test_krr_kernel_diagonal_and_limits():
    d = 12
    act = ActivationModel(SIGMA, dim=d)
    X = sample_sphere(d, math.sqrt(d), 30, 0)
    K = krr_kernel(X, X, act, d)
    assert np.allclose(np.diag(K), act.sphere_norm2, rtol=1e-12)
    tgt = TargetModel(FSTAR, dim=d)
    y = tgt.function(X @ tgt.direction)
    heavy = krr_fit_and_error(X, y, 1e10, act, tgt.coefficients("finite_d"), tgt.direction, d)
    assert heavy.test_error == pytest.approx(tgt.function.gegenbauer_projection(d, 3)[1], rel=1e-6)


def test_random_features_approach_kernel_with_many_features():
    d, n = 10, 60
    means = []
    for mult in (4, 16, 64):
        s = _setup(d=d, n=n, p=mult * n, lam=0.3)
        gaps = []
        for seed in range(4):
            data = make_dataset(s, seed)
            a = fit_rfrr(build_features(data.X, data.W, s.activation), data.y, s.lam)
            rf = exact_test_error(a, data.W, s.target.direction, s.target_coeffs, s.activation, d)
            krr = krr_fit_and_error(data.X, data.y, s.lam, s.activation, s.target_coeffs,
                                    s.target.direction, d).test_error
            gaps.append(abs(rf - krr) / krr)
        means.append(np.mean(gaps))
    assert means[0] > means[1] > means[2]
    assert means[2] < 0.05


def test_gaussian_equivalent_zero_target():
    s = _setup(d=6, n=30, p=20, target={"monomial": [0]}, noise=0.0, model="gaussian")
    res = gaussian_equiv_run(s, 0)
    assert res.test_error == pytest.approx(0.0, abs=1e-12)
    assert res.train_error == pytest.approx(0.0, abs=1e-12)
    s.max_features = 5
    with pytest.raises(MemoryBudgetExceeded):
        gaussian_equiv_run(s, 0)


def test_gaussian_equivalent_is_deterministic():
    s = _setup(d=6, n=30, p=20, model="gaussian")
    a, b = gaussian_equiv_run(s, 4), gaussian_equiv_run(s, 4)
    assert a.test_error == b.test_error and a.train_error == b.train_error


def test_run_trials_determinism_and_threads():
    s = _setup()
    a = run_trials(s, 4, 10)
    b = run_trials(s, 4, 10, threads=3)
    for m in a.mean:
        assert a.mean[m] == b.mean[m]
    single = run_trials(s, 1, 10)
    assert single.stderr["test_error"] == 0.0
    assert single.mean["test_error"] == rf_trial(s, 10).test_error
    assert a.std["test_error"] == pytest.approx(
        np.std([r.test_error for r in a.records], ddof=1))
    with pytest.raises(ValidationError):
        run_trials(s, 0, 0)


def test_setup_validation():
    with pytest.raises(ValidationError):
        _setup(model="nn")
    with pytest.raises(ValidationError):
        _setup(lam=0.0)
