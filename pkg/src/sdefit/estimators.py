"""scikit-learn style wrappers around the functional estimators.

``fit`` takes a :class:`~sdefit.core.DiscreteRecord` (or ``(times, states)``)
instead of a design matrix; hyper-parameters live in ``__init__`` so that
``get_params`` / ``set_params`` / ``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DiscreteRecord, Form1, Form2, LinearDriftKron, ModelSpec, check_spd
from .diffusion import estimate_form1, estimate_form2
from .drift import amle_kron, amle_linear, amle_newton, discretized_loglik
from .exceptions import ValidationError

METHODS = ("auto", "linear", "kron", "newton")


def check_record(X, time_scale=1.0):
    """Coerce ``X`` to a :class:`DiscreteRecord`.

    Accepts a record or a ``(times, states)`` pair; everything else raises
    :class:`ValidationError`.
    """
    if isinstance(X, DiscreteRecord):
        return X
    if isinstance(X, tuple) and len(X) == 2:
        return DiscreteRecord(X[0], X[1], time_scale)
    raise ValidationError("expected a DiscreteRecord or a (times, states) pair")


def check_model(model, record=None):
    if not isinstance(model, ModelSpec):
        raise ValidationError("model must be a ModelSpec")
    if record is not None and record.dim != model.dim_state:
        raise ValidationError(f"record has dimension {record.dim}, model expects {model.dim_state}")
    return model


class QVDiffusionEstimator(BaseEstimator):
    """Quadratic-variation estimator of ``vartheta`` for Form 1 or Form 2 models.

    Parameters
    ----------
    model : ModelSpec
        Supplies ``a0`` or ``sigma0`` through its ``diffusion_form``.

    Attributes
    ----------
    vartheta_ : ndarray (d, d)
        Symmetrized estimate.
    vartheta_raw_ : ndarray (d, d)
        The estimator as defined, before symmetrization.
    qv_ : QuadraticVariation
    """

    def __init__(self, model=None):
        self.model = model

    def fit(self, X, y=None):
        record = check_record(X)
        model = check_model(self.model, record)
        form = model.diffusion_form
        if isinstance(form, Form1):
            fit = estimate_form1(record, form.a0)
        elif isinstance(form, Form2):
            fit = estimate_form2(record, form.sigma0)
        else:
            raise ValidationError("QVDiffusionEstimator needs a Form1 or Form2 model")
        self.fit_result_ = fit
        self.vartheta_ = fit.sym
        self.vartheta_raw_ = fit.raw
        self.qv_ = fit.qv
        return self


class AMLEDriftEstimator(BaseEstimator):
    """Approximate MLE of the drift parameter with a plug-in ``vartheta``.

    Parameters
    ----------
    model : ModelSpec
    vartheta : array_like or None
        Diffusion parameter to plug in; None estimates it first with
        :class:`QVDiffusionEstimator`.
    method : {"auto", "linear", "kron", "newton"}
        "auto" picks the Kronecker or linear closed form when the model has
        that structure and Newton otherwise.
    penalty : PenaltySpec or None
        Only used by Newton.
    tol, max_iter : Newton controls.

    Attributes
    ----------
    mu_ : ndarray (n0,)
    vartheta_ : ndarray (d, d)
        The plug-in value actually used.
    fit_result_ : DriftFit
    """

    def __init__(self, model=None, vartheta=None, method="auto", penalty=None, tol=1e-8, max_iter=50):
        self.model = model
        self.vartheta = vartheta
        self.method = method
        self.penalty = penalty
        self.tol = tol
        self.max_iter = max_iter

    def _method(self, model):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}")
        if self.method != "auto":
            return self.method
        if isinstance(model.structure, LinearDriftKron):
            return "kron"
        return "linear" if model.structure is not None else "newton"

    def fit(self, X, y=None):
        record = check_record(X)
        model = check_model(self.model, record)
        if self.vartheta is None:
            vt = QVDiffusionEstimator(model).fit(record).vartheta_
        else:
            vt = np.atleast_2d(np.asarray(self.vartheta, dtype=float))
        check_spd(vt, "vartheta")
        method = self._method(model)
        if method == "kron":
            res = amle_kron(record, model, vt)
        elif method == "linear":
            res = amle_linear(record, model, vt)
        else:
            res = amle_newton(record, model, vt, self.penalty, tol=self.tol, max_iter=self.max_iter)
        self.fit_result_ = res
        self.mu_ = res.mu_hat
        self.vartheta_ = vt
        self.method_ = method
        return self

    def score(self, X, y=None):
        """Discretized log-likelihood of the fitted ``mu_`` per increment of ``X``."""
        check_is_fitted(self, "mu_")
        record = check_record(X)
        return discretized_loglik(record, self.model, self.mu_, self.vartheta_) / record.m
