import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ou1d_model, ou_kron_model, random_spd, random_stable
from sdefit.asymptotics import (
    StationarySample,
    affine_drift_clt_covariance,
    diffusion_clt_covariance,
    drift_clt_covariance,
    ou_coefficients,
    ou_drift_clt_covariance,
    stationary_draws,
)
from sdefit.core import Form1, Form2, Parameter, constant, form1_diffusion, linear_drift
from sdefit.exceptions import SingularSigma, UnstableH, ValidationError
from sdefit.linalg import solve_lyapunov


def test_exact_scalar_stationary_variance(ou1d):
    model, theta = ou1d
    s = stationary_draws(model, theta, 10_000, seed=3)
    assert s.source == "exact_ou"
    # F = kappa^2 / (2h) = 1
    assert s.points.var(ddof=1) == pytest.approx(1.0, rel=0.05)


def test_exact_mean_within_3se():
    g, H = np.array([0.5, -0.5]), np.array([[1.0, 0.3], [0.0, 1.5]])
    vt = np.array([[1.0, 0.3], [0.3, 0.5]])
    model = ou_kron_model(2, g, H)
    mu = np.hstack([g[:, None], -H]).reshape(-1, order="F")
    s = stationary_draws(model, Parameter(mu, vt), 20_000, seed=1)
    se = s.points.std(axis=0, ddof=1) / np.sqrt(s.size)
    assert np.all(np.abs(s.points.mean(axis=0) - np.linalg.solve(H, g)) <= 3 * se)


def test_unstable_h_raises():
    H = np.array([[-1.0]])
    model = ou_kron_model(1, [0.0], H)
    with pytest.raises(UnstableH):
        stationary_draws(model, Parameter([0.0, 1.0], [[1.0]]), 1000)


def test_ergodic_matches_exact():
    # same OU law without the tag forces the ergodic path
    g, H = np.array([0.5]), np.array([[1.0]])
    tagged = ou_kron_model(1, g, H)
    untagged = ou_kron_model(1)
    theta = Parameter([0.5, -1.0], [[2.0]])
    exact = stationary_draws(tagged, theta, 4000, seed=5).points[:, 0]
    erg = stationary_draws(untagged, theta, 4000, seed=5)
    assert erg.source == "ergodic_average" and erg.lag1_autocorr < 0.2
    e = erg.points[:, 0]
    for f in (lambda x: x, lambda x: x**2):
        a, b = f(exact), f(e)
        se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        assert abs(a.mean() - b.mean()) <= 4 * se


def test_non_dissipative_rejected():
    a0 = constant(np.eye(1))
    model = linear_drift(lambda x: np.asarray(x, dtype=float)[..., None], 1, 1, form1_diffusion(a0), Form1(a0))
    with pytest.raises(ValidationError):
        stationary_draws(model, Parameter([1.0], [[1.0]]), 1000)


def test_sample_burn_in_range():
    with pytest.raises(ValidationError):
        StationarySample(np.zeros((10, 1)), "x", burn_in=0.95)


def test_scalar_ou_sigma(ou1d):
    model, theta = ou1d
    exact = affine_drift_clt_covariance(model, theta)
    # Sigma = E[x^2] / kappa^2 = 1 / 2, limiting variance 2
    assert exact.sigma[0, 0] == pytest.approx(0.5, rel=1e-12)
    assert exact.covariance[0, 0] == pytest.approx(2.0, rel=1e-12)
    mc = drift_clt_covariance(model, theta, stationary_draws(model, theta, 20_000, seed=2))
    assert abs(mc.sigma[0, 0] - 0.5) <= 3 * mc.sigma_se[0, 0]


def test_ou_block_formula_vs_monte_carlo():
    rng = np.random.default_rng(11)
    H = random_stable(rng, 2)
    g = rng.normal(size=2)
    vt = random_spd(rng, 2)
    model = ou_kron_model(2, g, H)
    theta = Parameter(np.hstack([g[:, None], -H]).reshape(-1, order="F"), vt)
    mc = drift_clt_covariance(model, theta, stationary_draws(model, theta, 50_000, seed=4))
    block = ou_drift_clt_covariance(g, H, vt)
    # entries with constant integrand have zero spread, so allow rounding there
    assert np.all(np.abs(mc.sigma - block) <= 3 * mc.sigma_se + 1e-10 * np.abs(block))
    np.testing.assert_allclose(affine_drift_clt_covariance(model, theta).sigma, block, rtol=1e-10, atol=1e-12)


def test_ou_block_scalar_example():
    # g = 0, h = 1, kappa^2 = 2: F = 1, Sigma = diag(1, 1) / 2
    np.testing.assert_allclose(ou_drift_clt_covariance([0.0], [[1.0]], [[2.0]]), 0.5 * np.eye(2))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3))
def test_ou_block_is_spd(seed, d):
    rng = np.random.default_rng(seed)
    S = ou_drift_clt_covariance(rng.normal(size=d), random_stable(rng, d), random_spd(rng, d))
    np.testing.assert_allclose(S, S.T, atol=1e-12 * np.abs(S).max())
    assert np.linalg.eigvalsh(S).min() > 0


def test_sigma_stable_under_doubling(ou1d):
    model, theta = ou1d
    s1 = drift_clt_covariance(model, theta, stationary_draws(model, theta, 20_000, seed=8))
    s2 = drift_clt_covariance(model, theta, stationary_draws(model, theta, 40_000, seed=9))
    se = np.hypot(s1.sigma_se, s2.sigma_se)
    assert np.all(np.abs(s1.sigma - s2.sigma) <= 3 * se)


def test_singular_sigma():
    B0 = lambda x: np.concatenate([x[..., None], x[..., None]], axis=-1)
    a0 = constant(np.eye(1))
    model = linear_drift(B0, 1, 2, form1_diffusion(a0), Form1(a0))
    sample = StationarySample(np.random.default_rng(0).normal(size=(1000, 1)), "test")
    with pytest.raises(SingularSigma):
        drift_clt_covariance(model, Parameter([1.0, 1.0], [[1.0]]), sample)


def test_ou_coefficients_round_trip():
    H = np.array([[1.0, 0.3], [0.0, 1.5]])
    g = np.array([0.5, -0.5])
    mu = np.hstack([g[:, None], -H]).reshape(-1, order="F")
    g2, H2 = ou_coefficients(ou_kron_model(2), mu)
    np.testing.assert_allclose(g2, g, atol=1e-12)
    np.testing.assert_allclose(H2, H, atol=1e-12)


@pytest.mark.parametrize("vt", [0.5, 2.0, 3.0])
def test_scalar_diffusion_limit(vt):
    sample = StationarySample(np.random.default_rng(0).normal(size=(1000, 1)), "test")
    law = diffusion_clt_covariance(Form1(constant([[1.0]])), [[vt]], sample)
    assert law.vec_covariance[0, 0] == pytest.approx(2 * vt**2, rel=1e-12)
    law2 = diffusion_clt_covariance(Form2(constant([[1.0]])), [[vt]], sample)
    assert law2.vec_covariance[0, 0] == pytest.approx(2 * vt**2, rel=1e-12)


def test_form2_identity_matches_form1(rng):
    sample = StationarySample(rng.normal(size=(1000, 2)), "test")
    vt = random_spd(rng, 2)
    a = diffusion_clt_covariance(Form1(constant(np.eye(2))), vt, sample)
    b = diffusion_clt_covariance(Form2(constant(np.eye(2))), vt, sample)
    np.testing.assert_allclose(a.vec_covariance, b.vec_covariance, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(a.vec_covariance_sym, b.vec_covariance_sym, rtol=1e-12, atol=1e-14)


def test_identity_form_matches_gaussian_wishart(rng):
    # a0 = I: limit of sqrt(m)(QV/T - vt) has covariance Cov(vec(zz^T)) = (I + K)(vt kron vt)
    from sdefit.linalg import commutation_matrix
    sample = StationarySample(rng.normal(size=(1000, 2)), "test")
    vt = random_spd(rng, 2)
    law = diffusion_clt_covariance(Form1(constant(np.eye(2))), vt, sample)
    ref = (np.eye(4) + commutation_matrix(2)) @ np.kron(vt, vt)
    np.testing.assert_allclose(law.vec_covariance_sym, ref, rtol=1e-10)


@pytest.mark.parametrize("form", [Form1(lambda x: (1 + 0.5 * np.tanh(x[..., :1]) ** 2)[..., None] * np.eye(2)),
                                  Form2(lambda x: np.eye(2) + 0.3 * np.tanh(x[..., :1])[..., None]
                                        * np.array([[0.0, 1.0], [0.0, 0.0]]))])
def test_sampler_matches_covariance(form):
    rng = np.random.default_rng(2)
    sample = StationarySample(rng.normal(size=(2000, 2)), "test")
    law = diffusion_clt_covariance(form, random_spd(rng, 2), sample)
    draws = law.sample(100_000, seed=6)
    np.testing.assert_allclose(draws, np.swapaxes(draws, 1, 2))
    flat = draws.transpose(0, 2, 1).reshape(len(draws), -1)
    emp = np.cov(flat.T)
    ref = law.vec_covariance_sym
    assert np.linalg.norm(emp - ref) <= 0.02 * np.linalg.norm(ref)


def test_ou_block_kron_layout(rng):
    H = random_stable(rng, 2)
    vt = random_spd(rng, 2)
    F = solve_lyapunov(H, vt)
    M = ou_drift_clt_covariance(np.zeros(2), H, vt)
    vinv = np.linalg.inv(vt)
    # zero mean: block (k, l) of size d equals E[z_k z_l] vartheta^{-1}
    np.testing.assert_allclose(M[:2, :2], vinv)
    np.testing.assert_allclose(M[:2, 2:], 0.0, atol=1e-14)
    for i in range(2):
        for j in range(2):
            np.testing.assert_allclose(M[2 + 2 * i:4 + 2 * i, 2 + 2 * j:4 + 2 * j], F[i, j] * vinv, rtol=1e-12)
