import numpy as np
import pytest

from conftest import ou1d_model, random_spd, random_stable
from sdefit.core import ModelSpec, Parameter, ScalingRegime, record_moments
from sdefit.exceptions import Blowup, UnstableH
from sdefit.linalg import solve_lyapunov
from sdefit.simulate import (
    SimConfig,
    euler_maruyama,
    euler_maruyama_batch,
    exact_ou,
    exact_ou_moments,
    ou_stationary_law,
    ou_transition,
)


def _deterministic(drift, d=1):
    return ModelSpec(d, 1, drift, lambda vt, x: np.zeros(np.shape(x)[:-1] + (d, d)),
                     state_independent_diffusion=True)


def test_no_dynamics_constant_record():
    model = _deterministic(lambda mu, x: np.zeros_like(x), d=2)
    cfg = SimConfig([1.5, -2.0], ScalingRegime.from_gap(0.1, 0.5), 4, 3)
    rec = euler_maruyama(model, Parameter([0.0], np.eye(2)), cfg)
    assert np.all(rec.states == [1.5, -2.0])


def test_euler_first_order_on_ode():
    model = _deterministic(lambda mu, x: -x)
    reg = ScalingRegime.from_gap(1.0, 0.25)
    errs = []
    for K in (16, 32, 64, 128):
        rec = euler_maruyama(model, Parameter([0.0], [[1.0]]), SimConfig([1.0], reg, K, 0))
        errs.append(np.abs(rec.states[:, 0] - np.exp(-rec.times)).max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.05)


def test_euler_converges_to_exact_ou_matched_seeds(ou1d):
    model, theta = ou1d
    reg = ScalingRegime.from_gap(0.5, 0.25)
    rms = []
    for K in (4, 16, 64):
        cfg = SimConfig([0.5], reg, K, 11)
        eul, failed = euler_maruyama_batch(model, theta, cfg, range(200))
        assert not failed.any()
        exact = np.stack([exact_ou([0.0], [[1.0]], [[2.0]], cfg.with_stream(s)).states for s in range(200)])
        rms.append(np.sqrt(np.mean((eul - exact) ** 2)))
    # at least order 1/2: quadrupling K must shrink the RMS gap by >= 2
    assert rms[0] / rms[1] >= 2.0 and rms[1] / rms[2] >= 2.0


def test_blowup_detected():
    model = ModelSpec(1, 1, lambda mu, x: 50 * x, lambda vt, x: np.ones(np.shape(x)[:-1] + (1, 1)),
                      state_independent_diffusion=True)
    cfg = SimConfig([1.0], ScalingRegime.from_gap(0.05, 1.0), 1, 0)
    with pytest.raises(Blowup):
        euler_maruyama(model, Parameter([0.0], [[1.0]]), cfg)


def test_ou_transition_scalar():
    Phi, c, L = ou_transition([0.0], [[1.0]], [[2.0]], 0.7)
    assert Phi[0, 0] == pytest.approx(np.exp(-0.7), rel=1e-14)
    assert c[0] == 0.0
    # F = 1, V = F (1 - e^{-2 h})
    assert L[0, 0] ** 2 == pytest.approx(1 - np.exp(-1.4), rel=1e-13)


def test_ou_transition_matches_lyapunov_difference(rng):
    H, vt = random_stable(rng, 3), random_spd(rng, 3)
    Phi, c, L = ou_transition(np.zeros(3), H, vt, 0.4)
    F = solve_lyapunov(H, vt)
    np.testing.assert_allclose(L @ L.T, F - Phi @ F @ Phi.T, atol=1e-12)


def test_exact_ou_large_gap_marginal():
    vt = np.array([[1.0, 0.3], [0.3, 0.5]])
    reg = ScalingRegime(0.05, 20.0, 1)
    base = SimConfig([3.0, -3.0], reg, 1, 5)
    ends = np.array([exact_ou(np.zeros(2), np.eye(2), vt, base.with_stream(s)).states[-1]
                     for s in range(10_000)])
    emp = np.cov(ends.T)
    assert np.linalg.norm(emp - vt / 2) / np.linalg.norm(vt / 2) < 0.05


def test_exact_ou_deterministic_and_unstable():
    cfg = SimConfig([0.0], ScalingRegime.from_gap(0.1, 0.1), 1, 42, stream=9)
    a = exact_ou([0.0], [[1.0]], [[2.0]], cfg)
    b = exact_ou([0.0], [[1.0]], [[2.0]], cfg)
    np.testing.assert_array_equal(a.states, b.states)
    with pytest.raises(UnstableH):
        exact_ou([0.0], [[-1.0]], [[2.0]], cfg)


@pytest.mark.parametrize("d, K", [(1, 1), (1, 3), (2, 1), (2, 2), (3, 1)])
def test_moment_kernel_matches_record(rng, d, K):
    H, vt = random_stable(rng, d), random_spd(rng, d)
    g = rng.normal(size=d)
    cfg = SimConfig(rng.normal(size=d), ScalingRegime.from_exponent(1 / 20, 1.5), K, 3, stream=4)
    mom = exact_ou_moments(g, H, vt, cfg)
    ref = record_moments(exact_ou(g, H, vt, cfg))
    for name in ("zz", "zd", "qv"):
        a, b = getattr(mom, name), getattr(ref, name)
        assert np.abs(a - b).max() <= 1e-10 * (1 + np.abs(b).max())


def test_scaled_clock_is_same_path(ou1d):
    model, theta = ou1d
    reg = ScalingRegime.from_exponent(1 / 10, 1.0)
    orig = SimConfig([0.2], reg, 4, 8, "original")
    scaled = SimConfig([0.2], reg, 4, 8, "scaled")
    a = euler_maruyama(model, theta, orig)
    b = euler_maruyama(model, theta, scaled)
    np.testing.assert_allclose(b.times, reg.epsilon * a.times, rtol=1e-12)
    np.testing.assert_allclose(a.states, b.states, rtol=1e-9, atol=1e-12)
    assert b.original_gap == pytest.approx(a.gap, rel=1e-12)
    e1 = exact_ou([0.0], [[1.0]], [[2.0]], orig)
    e2 = exact_ou([0.0], [[1.0]], [[2.0]], scaled)
    np.testing.assert_array_equal(e1.states, e2.states)


def test_scaled_clock_equivalence_in_distribution():
    # drift is nonlinear so nothing is available in closed form
    model = ModelSpec(1, 1, lambda mu, x: -x - x**3, lambda vt, x: np.ones(np.shape(x)[:-1] + (1, 1)),
                      state_independent_diffusion=True)
    theta = Parameter([0.0], [[1.0]])
    reg = ScalingRegime.from_exponent(1 / 4, 1.0)
    a, fa = euler_maruyama_batch(model, theta, SimConfig([1.0], reg, 8, 1, "original"), range(2000))
    # independent noise for the second sample: a different seed
    b, fb = euler_maruyama_batch(model, theta, SimConfig([1.0], reg, 8, 2, "scaled"), range(2000))
    assert not fa.any() and not fb.any()
    xa, xb = a[:, -1, 0], b[:, -1, 0]
    se_mean = np.sqrt(xa.var() / 2000 + xb.var() / 2000)
    assert abs(xa.mean() - xb.mean()) < 4 * se_mean
    qa, qb = xa**2, xb**2
    se_sq = np.sqrt(qa.var() / 2000 + qb.var() / 2000)
    assert abs(qa.mean() - qb.mean()) < 4 * se_sq


def test_simconfig_round_trip():
    cfg = SimConfig([1.0, 2.0], ScalingRegime.from_exponent(0.1, 1.5), 8, 99, "scaled", 3)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SimConfig([0.0], cfg.regime, 0)


def test_stationary_law():
    mean, F = ou_stationary_law([1.0], [[2.0]], [[2.0]])
    assert mean[0] == 0.5 and F[0, 0] == pytest.approx(0.5)
