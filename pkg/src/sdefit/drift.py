"""Discretized likelihood and the approximate MLE of the drift parameter.

For a record ``x_0, ..., x_m`` with gap ``gap`` the Riemann-sum likelihood is

    l(mu) = sum_i a^{-1} b(mu, x_{i-1}) . dx_i - delta / 2 sum_i b^T a^{-1} b

with ``a = a(vartheta, x_{i-1})`` and ``delta`` defaulting to the gap. The
AMLE maximizes it (minus an optional penalty) with a plug-in ``vartheta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import (
    DiscreteRecord,
    LinearDrift,
    LinearDriftKron,
    RecordMoments,
    a_matrices,
    eval_a,
)
from .exceptions import SingularDiffusion, SingularGram, ValidationError
from .linalg import COND_LIMIT, batched_spd_solve, checked_solve, sym


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty ``epsilon**(alpha + 1/2) * ||mu||_p**p``."""

    alpha: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError("penalty alpha must be > 0")
        if not self.p >= 1:
            raise ValidationError("penalty p must be >= 1")

    def weight(self, epsilon):
        return epsilon ** (self.alpha + 0.5)

    def value(self, mu, epsilon):
        return self.weight(epsilon) * float(np.sum(np.abs(mu) ** self.p))

    def gradient(self, mu, epsilon):
        # at p == 1 the subgradient at mu_j == 0 is taken to be 0
        mu = np.asarray(mu, dtype=float)
        return self.weight(epsilon) * self.p * np.sign(mu) * np.abs(mu) ** (self.p - 1)


@dataclass
class DriftFit:
    mu_hat: np.ndarray
    gradient_norm_at_solution: float
    iterations: int
    converged: bool
    loglik_at_solution: float
    reason: str = "ok"
    hessian_eigenvalues: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        def finite(v):
            return float(v) if np.isfinite(v) else None

        return {
            "mu_hat": [finite(v) for v in np.asarray(self.mu_hat, dtype=float)],
            "loglik": finite(self.loglik_at_solution),
            "grad_norm": finite(self.gradient_norm_at_solution),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), allow_nan=False)


# a^{-1} application ----------------------------------------------------------


class _InverseDiffusion:
    """Applies ``a(vartheta, x_i)^{-1}`` to stacks of vectors or matrices.

    When the model declares a state-independent diffusion one Cholesky
    factorization serves every observation.
    """

    def __init__(self, model, vartheta, X):
        self.constant = bool(model.state_independent_diffusion)
        if self.constant:
            a = eval_a(model, vartheta, X[:1])[0]
            w = np.linalg.eigvalsh(a)
            if not (np.all(np.isfinite(w)) and w[0] > 0 and w[-1] <= COND_LIMIT * w[0]):
                raise SingularDiffusion("a(vartheta, x) is singular or ill-conditioned")
            self.a = a
            self.factor = sla.cho_factor(a, lower=True)
        else:
            self.a = a_matrices(model, vartheta, X)

    def solve(self, V):
        V = np.asarray(V, dtype=float)
        if self.constant:
            d = self.a.shape[0]
            # move the state axis to the front, solve all right-hand sides at once
            flat = np.moveaxis(V, -1 if V.ndim == 2 else -2, 0).reshape(d, -1)
            out = sla.cho_solve(self.factor, flat)
            if V.ndim == 2:
                return out.reshape(d, V.shape[0]).T
            return np.moveaxis(out.reshape(d, V.shape[0], V.shape[2]), 0, 1)
        return batched_spd_solve(self.a, V, SingularDiffusion, "a(vartheta, x)")


def _check_delta(data, delta):
    delta = data.original_gap if delta is None else float(delta)
    if not 0 < delta <= 1:
        raise ValidationError("delta must lie in (0, 1]")
    return delta


def _fd_jacobian(model, mu, X):
    # central differences of the drift in mu, used when no Jacobian is given
    mu = np.asarray(mu, dtype=float)
    cols = []
    for j in range(mu.size):
        h = 1e-6 * (1.0 + abs(mu[j]))
        e = np.zeros_like(mu)
        e[j] = h
        cols.append((model.drift(mu + e, X) - model.drift(mu - e, X)) / (2 * h))
    return np.stack(cols, axis=-1)


def discretized_loglik(data, model, mu, vartheta, delta=None):
    """Riemann-sum log-likelihood of ``mu`` with ``vartheta`` held fixed.

    Parameters
    ----------
    data : DiscreteRecord
    model : ModelSpec
    mu : array_like (n0,)
    vartheta : array_like (d, d)
    delta : float, optional
        Weight of the quadratic term, in (0, 1]. Defaults to the record's
        gap on the original clock.

    Raises
    ------
    SingularDiffusion
        If some ``a(vartheta, x_{i-1})`` has condition number above 1e12.
    """
    delta = _check_delta(data, delta)
    X, dX = data.left, data.increments
    b = np.asarray(model.drift(np.asarray(mu, dtype=float), X), dtype=float)
    ab = _InverseDiffusion(model, vartheta, X).solve(b)
    return float(np.sum(ab * dX) - 0.5 * delta * np.sum(ab * b))


def loglik_gradient(data, model, mu, vartheta, delta=None, fd_fallback=True):
    """Gradient ``sum J^T a^{-1} dx - delta sum J^T a^{-1} b`` with ``J = D_mu b``."""
    delta = _check_delta(data, delta)
    X, dX = data.left, data.increments
    mu = np.asarray(mu, dtype=float)
    J = model.jacobian(mu, X)
    if J is None:
        if not fd_fallback:
            raise ValidationError("model has no drift_jacobian and fd_fallback is off")
        J = _fd_jacobian(model, mu, X)
    J = np.broadcast_to(np.asarray(J, dtype=float), X.shape + (mu.size,))
    b = np.asarray(model.drift(mu, X), dtype=float)
    inv = _InverseDiffusion(model, vartheta, X)
    resid = inv.solve(dX - delta * b)
    return np.einsum("ija,ij->a", J, resid)


# closed forms ---------------------------------------------------------------


def _finish(data, model, mu_hat, vartheta):
    delta = min(data.original_gap, 1.0)
    ll = discretized_loglik(data, model, mu_hat, vartheta, delta)
    grad = loglik_gradient(data, model, mu_hat, vartheta, delta)
    return DriftFit(mu_hat, float(np.linalg.norm(grad)), 0, True, ll)


def amle_linear(data, model, vartheta_hat):
    """Closed-form AMLE for ``b(mu, x) = B0(x) @ mu``.

    ``mu_hat = M^{-1} sum_i B0^T a^{-1} dx_i`` with the Gram matrix
    ``M = gap * sum_i B0^T a^{-1} B0``.

    Raises
    ------
    SingularGram
        If ``cond(M) > 1e12``.
    """
    if model.structure is None:
        raise ValidationError("amle_linear needs a linear drift structure")
    X, dX = data.left, data.increments
    B = np.broadcast_to(model.B0(X), X.shape + (model.dim_drift_param,))
    inv = _InverseDiffusion(model, vartheta_hat, X)
    aB = inv.solve(B)
    gram = data.original_gap * np.einsum("ija,ijb->ab", B, aB)
    driver = np.einsum("ija,ij->a", aB, dX)
    mu_hat = checked_solve(sym(gram), driver, SingularGram, "drift Gram matrix")
    return _finish(data, model, mu_hat, vartheta_hat)


def kron_system(data, model, vartheta_hat):
    """Gram matrix ``gap * sum beta beta^T kron a^{-1}`` and driver ``sum beta kron a^{-1} dx``."""
    if not isinstance(model.structure, LinearDriftKron):
        raise ValidationError("model has no Kronecker drift structure")
    X, dX = data.left, data.increments
    beta = np.asarray(model.structure.beta0(X), dtype=float)
    m0 = beta.shape[-1]
    d = model.dim_state
    inv = _InverseDiffusion(model, vartheta_hat, X)
    adx = inv.solve(dX)
    if inv.constant:
        ainv = sla.cho_solve(inv.factor, np.eye(d))
        gram = np.kron(beta.T @ beta, sym(ainv))
    else:
        ainv = inv.solve(np.broadcast_to(np.eye(d), X.shape[:1] + (d, d)))
        gram = np.einsum("ij,ik,iab->jakb", beta, beta, ainv).reshape(m0 * d, m0 * d)
    gram = data.original_gap * sym(gram)
    # sum_i beta_i kron y_i = vec(sum_i y_i beta_i^T)
    driver = (adx.T @ beta).reshape(-1, order="F")
    return gram, driver


def amle_kron(data, model, vartheta_hat):
    """Closed-form AMLE for ``b = A beta0(x)``; returns ``vec(A_hat)`` in ``mu_hat``."""
    gram, driver = kron_system(data, model, vartheta_hat)
    mu_hat = checked_solve(gram, driver, SingularGram, "drift Gram matrix")
    return _finish(data, model, mu_hat, vartheta_hat)


# sufficient-statistic shortcuts --------------------------------------------


def moments_system(moments, coef, a):
    """Gram matrix and driver of a linear AMLE from :class:`RecordMoments`.

    Valid for ``B0(x) = C[0] + sum_k x_k C[k+1]`` (``coef`` from
    :func:`sdefit.core.affine_coefficients`) and constant ``a``.
    """
    C = np.asarray(coef, dtype=float)
    ainv_C = np.stack([sla.solve(a, Ck, assume_a="pos") for Ck in C])
    gram = moments.original_gap * np.einsum("kia,kl,lib->ab", C, moments.zz, ainv_C)
    driver = np.einsum("kia,ki->a", ainv_C, moments.zd)
    return sym(gram), driver


def amle_linear_moments(moments: RecordMoments, coef, a):
    """:func:`amle_linear` evaluated from sufficient statistics.

    Returns the estimate and the log-likelihood (with ``delta = gap``) at it.
    """
    w = np.linalg.eigvalsh(a)
    if not (w[0] > 0 and w[-1] <= COND_LIMIT * w[0]):
        raise SingularDiffusion("a(vartheta, x) is singular or ill-conditioned")
    gram, driver = moments_system(moments, coef, a)
    mu_hat = checked_solve(gram, driver, SingularGram, "drift Gram matrix")
    # l = mu . driver - gap / 2 * mu^T (gram / gap) mu
    ll = float(mu_hat @ driver - 0.5 * mu_hat @ gram @ mu_hat)
    return mu_hat, ll


# Newton ---------------------------------------------------------------------


def amle_newton(data, model, vartheta_hat, penalty=None, epsilon=None, init=None,
                tol=1e-8, max_iter=50, delta=None):
    """Minimize ``-epsilon * l(mu) + penalty`` by damped Newton.

    The Hessian is a central finite difference of the analytic gradient. If
    it has an eigenvalue below ``-1e-10`` the step falls back to steepest
    descent; if its smallest eigenvalue lies in ``[-1e-10, 1e-10]`` the loss
    is treated as flat, the minimum-norm Newton step is taken and the fit is
    returned with ``reason="degenerate"``. Hitting ``max_iter`` returns the
    best iterate with ``converged=False`` and ``reason="max_iter_exceeded"``.
    Once ``|g| <= tol`` up to three extra Newton steps are taken while each
    at least halves the gradient, so ill-conditioned problems are not left
    ``tol / lambda_min`` away from the minimizer.

    Parameters
    ----------
    penalty : PenaltySpec or None
        None means no penalty.
    epsilon : float, optional
        Defaults to ``1 / span`` of the record on the original clock.
    tol : float
        Convergence threshold on the Euclidean norm of the loss gradient.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    eps = data.epsilon if epsilon is None else float(epsilon)
    delta = _check_delta(data, delta)
    n0 = model.dim_drift_param
    mu = np.zeros(n0) if init is None else np.array(init, dtype=float).reshape(n0)

    def loss(v):
        out = -eps * discretized_loglik(data, model, v, vartheta_hat, delta)
        if penalty is not None:
            out += penalty.value(v, eps)
        return out

    def grad(v):
        out = -eps * loglik_gradient(data, model, v, vartheta_hat, delta)
        if penalty is not None:
            out = out + penalty.gradient(v, eps)
        return out

    def hessian(v):
        cols = []
        for j in range(n0):
            h = 1e-5 * (1.0 + abs(v[j]))
            e = np.zeros(n0)
            e[j] = h
            cols.append((grad(v + e) - grad(v - e)) / (2 * h))
        return sym(np.array(cols).T)

    f, g = loss(mu), grad(mu)
    eig = Hm = None
    reason = "max_iter_exceeded"
    it = polish = 0
    while it < max_iter:
        gn = np.linalg.norm(g)
        if gn <= tol:
            reason = "ok"
            if Hm is None or eig[0] <= 1e-10 or polish >= 3:
                break
            # |g| <= tol still leaves an O(tol / lambda_min) error in mu; refine while Newton keeps paying off
            cand = mu - np.linalg.solve(Hm, g)
            gc = grad(cand)
            if not np.linalg.norm(gc) < 0.5 * gn:
                break
            mu, f, g = cand, loss(cand), gc
            it += 1
            polish += 1
            continue
        it += 1
        Hm = hessian(mu)
        eig = np.linalg.eigvalsh(Hm)
        if abs(eig[0]) <= 1e-10:
            mu = mu - np.linalg.pinv(Hm, hermitian=True) @ g
            f, g = loss(mu), grad(mu)
            reason = "degenerate"
            break
        step = -np.linalg.solve(Hm, g) if eig[0] > 0 else -g
        slope = float(g @ step)
        t = 1.0
        for _ in range(60):
            cand = mu + t * step
            fc = loss(cand)
            if fc <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            # no descent possible at working precision
            break
        mu, f, g = cand, fc, grad(cand)
    gnorm = float(np.linalg.norm(g))
    converged = reason == "ok" or (reason == "max_iter_exceeded" and gnorm <= tol)
    if converged:
        reason = "ok"
    elif reason == "max_iter_exceeded" and it < max_iter:
        reason = "line_search_failed"
    ll = discretized_loglik(data, model, mu, vartheta_hat, delta)
    return DriftFit(mu, gnorm, it, converged, ll, reason, eig)
