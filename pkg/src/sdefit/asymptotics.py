"""Theoretical limit laws the Monte Carlo experiments are compared against.

Drift: ``epsilon^{-1/2} (mu_hat - mu0) -> N(0, Sigma^{-1})`` with
``Sigma = int D_mu b^T a^{-1} D_mu b dpi``.

Diffusion: ``Delta^{-1/2} (vartheta_hat - vartheta0) -> 2 P^{-1} (zeta)_sym``
where ``Delta = epsilon * gap`` is the gap on the rescaled clock,
``vec(zeta) ~ N(0, C)``, ``C = 1/2 int a kron a dpi`` and ``P = int a0 dpi``
(Form 1) or ``int sigma0 kron sigma0 dpi`` (Form 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Form1, Form2, ModelSpec, Parameter, ScalingRegime, affine_coefficients, a_matrices
from .core import check_drift_dissipativity, eval_a
from .exceptions import SingularSigma, ValidationError
from .linalg import (
    COND_LIMIT,
    batched_spd_solve,
    checked_solve,
    commutation_matrix,
    psd_sqrt,
    solve_lyapunov,
    sym,
)
from .rng import normals

BURN_IN = 0.2
LAG1_TARGET = 0.2


@dataclass(frozen=True)
class StationarySample:
    points: np.ndarray
    source: str
    burn_in: float = 0.0
    stride: int = 1
    lag1_autocorr: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.burn_in <= 0.9:
            raise ValidationError("burn_in must lie in [0, 0.9]")

    @property
    def size(self):
        return self.points.shape[0]


def ou_coefficients(model, mu):
    """``(g, H)`` with ``b(mu, x) = g - H x``, or None if the drift is not affine in x."""
    d = model.dim_state
    mu = np.asarray(mu, dtype=float)
    C = affine_coefficients(lambda x: model.drift(mu, x), d)
    if C is None:
        return None
    return C[0], -C[1:].T


def _ou_law(model, theta0):
    gh = ou_coefficients(model, theta0.mu)
    if gh is None:
        raise ValidationError("OU-tagged model has a drift that is not affine in x")
    g, H = gh
    a = eval_a(model, theta0.vartheta, np.zeros(model.dim_state))
    mean = np.linalg.solve(H, g)
    return g, H, a, mean, solve_lyapunov(H, a)


def _lag1(v):
    v = v - v.mean()
    den = float(v @ v)
    return float(v[:-1] @ v[1:]) / den if den > 0 else 0.0


def stationary_draws(model: ModelSpec, theta0: Parameter, N: int, seed: int = 0,
                     burn_in: float = BURN_IN, base_interval: float = 0.1, substeps: int = 10,
                     max_stride: int = 4096):
    """Draws from (an approximation of) the stationary law at ``theta0``.

    OU-tagged models are sampled exactly from ``N(H^{-1} g, F)``. Otherwise one
    long Euler path is simulated from the origin, the first ``burn_in``
    fraction is discarded and the rest thinned to ``N`` points. The thinning
    stride (in units of ``base_interval``) doubles until the lag-1
    autocorrelation of ``V(x) = 1 + |x|^2 / 2`` drops below 0.2.
    """
    from .simulate import SimConfig, euler_maruyama

    if N < 1:
        raise ValidationError("N must be positive")
    d = model.dim_state
    if model.ou is not None:
        _, _, _, mean, F = _ou_law(model, theta0)
        z = normals(seed, 0, 0, (N, d))
        L = np.linalg.cholesky(F)
        return StationarySample(mean + z @ L.T, "exact_ou")
    diag = check_drift_dissipativity(model, theta0.mu, [10.0, 100.0, 1000.0], seed=seed)
    if diag["flagged"][-1]:
        raise ValidationError("drift is not dissipative at large radii; no stationary law")
    stride = 1
    stream = 0
    while True:
        kept = N * stride
        total = int(np.ceil(kept / (1.0 - burn_in)))
        regime = ScalingRegime.from_gap(1.0 / (total * base_interval), base_interval)
        cfg = SimConfig(np.zeros(d), regime, substeps, seed, "original", stream)
        path = euler_maruyama(model, theta0, cfg).states
        tail = path[-kept:][::stride]
        rho = _lag1(1.0 + 0.5 * np.sum(tail**2, axis=1))
        if rho < LAG1_TARGET or stride >= max_stride:
            return StationarySample(tail, "ergodic_average", burn_in, stride, rho)
        stride *= 2
        stream += 1


@dataclass
class DriftCLT:
    """``Sigma`` with elementwise Monte Carlo standard errors and ``Sigma^{-1}``."""

    sigma: np.ndarray
    sigma_se: np.ndarray
    covariance: np.ndarray

    def to_dict(self):
        return {"Sigma": self.sigma.tolist(), "Sigma_se": self.sigma_se.tolist(),
                "covariance": self.covariance.tolist()}


def _inverse_sigma(S):
    w = np.linalg.eigvalsh(S)
    if not (np.all(np.isfinite(w)) and w[0] > 0 and w[-1] <= COND_LIMIT * w[0]):
        raise SingularSigma("Sigma is singular or ill-conditioned: mu is not identifiable")
    return sym(checked_solve(S, np.eye(S.shape[0]), SingularSigma, "Sigma"))


def drift_clt_covariance(model, theta0, sample):
    """Monte Carlo ``Sigma = mean_x D_mu b^T a^{-1} D_mu b`` over ``sample``.

    Raises
    ------
    SingularSigma
        If ``cond(Sigma) > 1e12``.
    """
    X = np.asarray(sample.points, dtype=float)
    n0 = model.dim_drift_param
    J = model.jacobian(theta0.mu, X)
    if J is None:
        raise ValidationError("drift_clt_covariance needs a drift Jacobian or linear structure")
    J = np.broadcast_to(np.asarray(J, dtype=float), X.shape + (n0,))
    A = a_matrices(model, theta0.vartheta, X)
    terms = np.einsum("nia,nib->nab", J, batched_spd_solve(A, J, SingularSigma, "a(vartheta0, x)"))
    S = sym(terms.mean(axis=0))
    se = terms.std(axis=0, ddof=1) / np.sqrt(X.shape[0]) if X.shape[0] > 1 else np.full_like(S, np.nan)
    return DriftCLT(S, se, _inverse_sigma(S))


def ou_drift_clt_covariance(g, H, vartheta):
    """``Sigma = [[1, m^T], [m, m m^T + F]] kron vartheta^{-1}`` with ``m = H^{-1} g``.

    This is the information matrix of ``mu = vec([g, -H])`` for the drift
    ``g - H x``; ``F`` solves ``H F + F H^T = vartheta``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    vt = np.atleast_2d(np.asarray(vartheta, dtype=float))
    F = solve_lyapunov(H, vt)
    mean = np.linalg.solve(H, g)
    return np.kron(_second_moment(mean, F), np.linalg.inv(vt))


def _second_moment(mean, F):
    # E[z z^T] for z = (1, x), x ~ N(mean, F)
    d = mean.size
    M = np.empty((d + 1, d + 1))
    M[0, 0] = 1.0
    M[0, 1:] = M[1:, 0] = mean
    M[1:, 1:] = np.outer(mean, mean) + F
    return M


def affine_drift_clt_covariance(model, theta0):
    """Exact ``Sigma`` for an OU model whose ``B0(x)`` is affine in ``x``.

    With ``B0(x) = C_0 + sum_k x_k C_k`` and constant ``a``,
    ``Sigma = sum_{kl} C_k^T a^{-1} C_l E[z_k z_l]`` under the stationary
    Gaussian law. Returns None when the structure does not apply.
    """
    if model.ou is None or model.structure is None:
        return None
    coef = affine_coefficients(model.B0, model.dim_state)
    if coef is None:
        return None
    _, _, a, mean, F = _ou_law(model, theta0)
    Ezz = _second_moment(mean, F)
    ainv_C = np.stack([np.linalg.solve(a, Ck) for Ck in coef])
    S = sym(np.einsum("kia,kl,lib->ab", coef, Ezz, ainv_C))
    return DriftCLT(S, np.zeros_like(S), _inverse_sigma(S))


@dataclass
class DiffusionLimitLaw:
    """Limit of ``Delta^{-1/2} (vartheta_hat - vartheta0)``, vectorized by columns.

    ``vec_covariance`` belongs to the raw estimator ``2 P^{-1} (zeta)_sym``;
    ``vec_covariance_sym`` to its symmetric part, which is what
    :meth:`sample` draws.
    """

    form: str
    C: np.ndarray
    P: np.ndarray
    vec_covariance: np.ndarray
    vec_covariance_sym: np.ndarray
    C_se: np.ndarray = field(repr=False, default=None)
    P_se: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self):
        return int(round(np.sqrt(self.C.shape[0])))

    def linear_map(self):
        """Matrix ``M`` with ``vec(limit) = M vec(zeta)``."""
        d = self.dim
        IK = np.eye(d * d) + commutation_matrix(d)
        if self.form == "form1":
            return np.kron(np.eye(d), np.linalg.inv(self.P)) @ IK
        return np.linalg.solve(self.P, IK)

    def sample(self, n, seed=0, stream=0, symmetric=True):
        """``n`` draws of the limit matrix, shape (n, d, d)."""
        d = self.dim
        z = normals(seed, stream, 0, (n, d * d))
        zeta = unvec_stack(z @ psd_sqrt(self.C).T, d)
        zs = sym(zeta)
        if self.form == "form1":
            out = 2.0 * np.linalg.solve(self.P, zs)
        else:
            flat = np.stack([m.reshape(-1, order="F") for m in zs])
            out = unvec_stack(2.0 * np.linalg.solve(self.P, flat.T).T, d)
        return sym(out) if symmetric else out

    def to_dict(self):
        return {"form": self.form, "C": self.C.tolist(), "P": self.P.tolist(),
                "vec_covariance": self.vec_covariance.tolist()}


def unvec_stack(V, d):
    """Row-wise :func:`unvec` of an (n, d*d) array."""
    return np.swapaxes(np.asarray(V, dtype=float).reshape(-1, d, d), -1, -2)


def diffusion_clt_covariance(form, vartheta0, sample):
    """Pieces and exact covariance of the diffusion CLT limit.

    Parameters
    ----------
    form : Form1 or Form2
    vartheta0 : array_like (d, d)
    sample : StationarySample

    Raises
    ------
    SingularIntegral
        If ``P`` has condition number above 1e12.
    """
    from .exceptions import SingularIntegral

    X = np.asarray(sample.points, dtype=float)
    vt = np.atleast_2d(np.asarray(vartheta0, dtype=float))
    d = vt.shape[0]
    n = X.shape[0]
    if isinstance(form, Form1):
        a0 = np.broadcast_to(np.asarray(form.a0(X), dtype=float), (n, d, d))
        a = sym(a0 @ vt)
        Pt = a0
        name = "form1"
    elif isinstance(form, Form2):
        s0 = np.broadcast_to(np.asarray(form.sigma0(X), dtype=float), (n, d, d))
        a = sym(s0 @ vt @ np.swapaxes(s0, -1, -2))
        Pt = np.einsum("iab,ice->iacbe", s0, s0).reshape(n, d * d, d * d)
        name = "form2"
    else:
        raise ValidationError("form must be Form1 or Form2")
    aa = np.einsum("iab,ice->iacbe", a, a).reshape(n, d * d, d * d)
    C = sym(0.5 * aa.mean(axis=0))
    P = Pt.mean(axis=0)
    C_se = 0.5 * aa.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else None
    P_se = Pt.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else None
    # fail loudly on an ill-conditioned P
    checked_solve(P, np.eye(P.shape[0]), SingularIntegral, "integral of the diffusion shape")
    law = DiffusionLimitLaw(name, C, P, np.zeros((d * d, d * d)), np.zeros((d * d, d * d)), C_se, P_se)
    M = law.linear_map()
    S = 0.5 * (np.eye(d * d) + commutation_matrix(d))
    law.vec_covariance = sym(M @ C @ M.T)
    law.vec_covariance_sym = sym(S @ law.vec_covariance @ S.T)
    return law
