import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd, random_stable
from sdefit.exceptions import IllConditioned, NotSymmetric, UnstableH
from sdefit.linalg import (
    checked_solve,
    commutation_matrix,
    kron,
    psd_sqrt,
    solve_lyapunov,
    sym,
    unvec,
    vec,
)

seeds = st.integers(0, 2**32 - 1)


@pytest.mark.parametrize(
    "A, B",
    [
        (np.eye(3), np.eye(3)),
        (np.diag([4.0, 9.0]), np.diag([2.0, 3.0])),
    ],
)
def test_psd_sqrt_examples(A, B):
    np.testing.assert_allclose(psd_sqrt(A), B, atol=1e-14)


def test_psd_sqrt_residual():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    B = psd_sqrt(A)
    assert np.linalg.norm(B @ B - A) < 1e-10
    np.testing.assert_array_equal(B, B.T)
    assert np.linalg.eigvalsh(B).min() >= 0


def test_psd_sqrt_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        psd_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_psd_sqrt_clamps_rounding_negatives():
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    A = np.outer(v, v) - 1e-16 * np.eye(2)
    assert np.all(np.isfinite(psd_sqrt(A)))


@settings(max_examples=100, deadline=None)
@given(seed=seeds, d=st.integers(1, 6))
def test_psd_sqrt_property(seed, d):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(d, d))
    A = G @ G.T
    B = psd_sqrt(A)
    assert np.linalg.norm(B @ B - A) <= 1e-10 * max(np.linalg.norm(A), 1e-300)


@pytest.mark.parametrize(
    "A, expected",
    [
        (np.array([[1.0, 2.0], [3.0, 4.0]]), [1.0, 3.0, 2.0, 4.0]),
        (np.zeros((2, 3)), np.zeros(6)),
        (np.array([[5.0, 6.0]]), [5.0, 6.0]),
    ],
)
def test_vec_examples(A, expected):
    np.testing.assert_array_equal(vec(A), expected)


def test_unvec_inverts_vec(rng):
    A = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(unvec(vec(A), 3), A)


def test_kron_examples():
    np.testing.assert_array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))
    np.testing.assert_array_equal(kron(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[2.0]])),
                                  [[0.0, 2.0], [2.0, 0.0]])


@settings(max_examples=100, deadline=None)
@given(seed=seeds, p=st.integers(1, 4), q=st.integers(1, 4), r=st.integers(1, 4), s=st.integers(1, 4))
def test_kron_vec_identity(seed, p, q, r, s):
    rng = np.random.default_rng(seed)
    A, B, X = rng.normal(size=(p, q)), rng.normal(size=(r, s)), rng.normal(size=(s, q))
    lhs = vec(B @ X @ A.T)
    assert np.abs(lhs - kron(A, B) @ vec(X)).max() < 1e-12 * (1 + np.abs(lhs).max())


def test_commutation_matrix(rng):
    A = rng.normal(size=(3, 2))
    np.testing.assert_array_equal(commutation_matrix(3, 2) @ vec(A), vec(A.T))


@pytest.mark.parametrize(
    "A, expected",
    [
        (np.array([[1.0, 2.0], [2.0, 5.0]]), np.array([[1.0, 2.0], [2.0, 5.0]])),
        (np.array([[0.0, 2.0], [0.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 0.0]])),
        (np.array([[0.0, 3.0], [-3.0, 0.0]]), np.zeros((2, 2))),
    ],
)
def test_sym_examples(A, expected):
    np.testing.assert_array_equal(sym(A), expected)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_lyapunov_identity(d):
    np.testing.assert_allclose(solve_lyapunov(np.eye(d), np.eye(d)), np.eye(d) / 2, atol=1e-15)


def test_lyapunov_scalar():
    np.testing.assert_allclose(solve_lyapunov([[3.0]], [[2.0]]), [[2.0 / 6.0]], rtol=1e-14)


def test_lyapunov_residual_example():
    H = np.array([[2.0, 1.0], [0.0, 3.0]])
    Q = np.eye(2)
    F = solve_lyapunov(H, Q)
    assert np.linalg.norm(H @ F + F @ H.T - Q) < 1e-9
    np.testing.assert_array_equal(F, F.T)


@settings(max_examples=100, deadline=None)
@given(seed=seeds, d=st.integers(1, 5))
def test_lyapunov_property(seed, d):
    rng = np.random.default_rng(seed)
    H = random_stable(rng, d)
    Q = random_spd(rng, d)
    F = solve_lyapunov(H, Q)
    assert np.linalg.norm(H @ F + F @ H.T - Q) <= 1e-9 * np.linalg.norm(Q)


@pytest.mark.parametrize("H", [np.array([[-1.0]]), np.array([[0.0, 1.0], [-1.0, 0.0]]), np.diag([1.0, -0.1])])
def test_lyapunov_unstable(H):
    with pytest.raises(UnstableH):
        solve_lyapunov(H, np.eye(H.shape[0]))


def test_checked_solve_ill_conditioned():
    with pytest.raises(IllConditioned):
        checked_solve(np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]]), np.ones(2))
    np.testing.assert_allclose(checked_solve(np.diag([2.0, 4.0]), np.ones(2)), [0.5, 0.25])
