"""Quadratic-variation estimators of the diffusion parameter.

Form 1 (``a = a0(x) vartheta``)::

    vartheta_hat = (gap * sum_i a0(x_{i-1}))^{-1} QV

Form 2 (``sigma = sigma0(x) kappa``)::

    vec(vartheta_hat) = (gap * sum_i sigma0 kron sigma0)^{-1} vec(QV)

where ``QV = sum_i dx_i dx_i^T``. The raw estimate is not symmetric in
general; its symmetric part is reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Form1, Form2, RecordMoments
from .exceptions import SingularIntegral, ValidationError
from .linalg import checked_solve, sym, unvec, vec


@dataclass(frozen=True)
class QuadraticVariation:
    matrix: np.ndarray
    gap: float
    count: int


@dataclass(frozen=True)
class DiffusionFit:
    """Raw and symmetrized estimate of ``vartheta``."""

    raw: np.ndarray
    sym: np.ndarray
    form: str
    qv: QuadraticVariation

    def to_dict(self):
        return {"form": self.form, "vartheta_hat": self.raw.tolist(), "vartheta_hat_sym": self.sym.tolist()}


def discretized_qv(data):
    """``sum_i (x_i - x_{i-1})(x_i - x_{i-1})^T`` as a :class:`QuadraticVariation`."""
    dX = data.increments
    return QuadraticVariation(sym(dX.T @ dX), data.original_gap, data.m)


def _stack(fn, X, d):
    out = np.asarray(fn(X), dtype=float)
    return np.broadcast_to(out, X.shape[:1] + (d, d))


def _form1_solve(S, qv):
    raw = checked_solve(S, qv.matrix, SingularIntegral, "integral of a0")
    return DiffusionFit(raw, sym(raw), "form1", qv)


def _form2_solve(K, qv):
    d = qv.matrix.shape[0]
    raw = unvec(checked_solve(K, vec(qv.matrix), SingularIntegral, "integral of sigma0 kron sigma0"), d)
    return DiffusionFit(raw, sym(raw), "form2", qv)


def estimate_form1(data, a0):
    """Form-1 estimator with left-endpoint integral ``S = gap * sum a0(x_{i-1})``.

    Raises
    ------
    SingularIntegral
        If ``cond(S) > 1e12``.
    """
    d = data.dim
    S = data.original_gap * _stack(a0, data.left, d).sum(axis=0)
    return _form1_solve(S, discretized_qv(data))


def estimate_form2(data, sigma0):
    """Form-2 estimator through the vectorized ``d^2 x d^2`` solve.

    Raises
    ------
    SingularIntegral
        If the Kronecker integral has condition number above 1e12.
    """
    d = data.dim
    s0 = _stack(sigma0, data.left, d)
    # kron(A, B)[a*d + c, b*d + e] = A[a, b] B[c, e]
    K = np.einsum("iab,ice->iacbe", s0, s0).sum(axis=0).reshape(d * d, d * d)
    return _form2_solve(data.original_gap * K, discretized_qv(data))


def estimate_diffusion(data, model):
    """Dispatch on the model's ``diffusion_form``."""
    form = model.diffusion_form
    if isinstance(form, Form1):
        return estimate_form1(data, form.a0)
    if isinstance(form, Form2):
        return estimate_form2(data, form.sigma0)
    raise ValidationError("model has no Form1/Form2 diffusion structure")


def estimate_from_moments(moments: RecordMoments, form, x_probe):
    """Form-1/Form-2 estimate from sufficient statistics.

    Only valid when ``a0`` (or ``sigma0``) is constant; it is evaluated once
    at ``x_probe``.
    """
    d = moments.dim
    qv = QuadraticVariation(sym(moments.qv), moments.original_gap, moments.m)
    scale = moments.original_gap * moments.m
    x_probe = np.asarray(x_probe, dtype=float)
    if isinstance(form, Form1):
        return _form1_solve(scale * np.asarray(form.a0(x_probe), dtype=float).reshape(d, d), qv)
    if isinstance(form, Form2):
        s0 = np.asarray(form.sigma0(x_probe), dtype=float).reshape(d, d)
        return _form2_solve(scale * np.kron(s0, s0), qv)
    raise ValidationError("moments estimate needs a Form1 or Form2 tag")
