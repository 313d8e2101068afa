import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import ou_kron_model
from sdefit.core import ModelSpec, ScalingRegime, constant, form1_diffusion
from sdefit.diffusion import estimate_form2
from sdefit.drift import PenaltySpec, amle_kron, amle_newton
from sdefit.estimators import AMLEDriftEstimator, QVDiffusionEstimator
from sdefit.exceptions import ValidationError
from sdefit.simulate import SimConfig, exact_ou


@pytest.fixture
def record():
    cfg = SimConfig([0.5, -0.3], ScalingRegime.from_exponent(1 / 20, 1.5), 1, 2)
    return exact_ou([0.5, -0.5], [[1.0, 0.3], [0.0, 1.5]], [[1.0, 0.3], [0.3, 0.5]], cfg)


def test_get_params_and_clone():
    est = AMLEDriftEstimator(model=None, method="newton", tol=1e-9)
    params = est.get_params()
    assert params["method"] == "newton" and params["tol"] == 1e-9
    c = clone(est)
    assert c is not est and c.get_params() == params
    assert QVDiffusionEstimator().set_params(model=3).model == 3


def test_not_fitted():
    with pytest.raises(NotFittedError):
        AMLEDriftEstimator(ou_kron_model(2)).score(None)


def test_diffusion_estimator_matches_function(record):
    model = ou_kron_model(2)
    est = QVDiffusionEstimator(model).fit(record)
    ref = estimate_form2(record, model.diffusion_form.sigma0)
    np.testing.assert_array_equal(est.vartheta_, ref.sym)
    np.testing.assert_array_equal(est.vartheta_raw_, ref.raw)


def test_drift_estimator_plugs_in_qv(record):
    model = ou_kron_model(2)
    est = AMLEDriftEstimator(model).fit(record)
    vt = QVDiffusionEstimator(model).fit(record).vartheta_
    assert est.method_ == "kron"
    np.testing.assert_array_equal(est.vartheta_, vt)
    np.testing.assert_array_equal(est.mu_, amle_kron(record, model, vt).mu_hat)
    assert np.isfinite(est.score(record))


def test_tuple_input_and_newton(record):
    model = ou_kron_model(2)
    pen = PenaltySpec(2.0, 2.0)
    est = AMLEDriftEstimator(model, vartheta=np.eye(2), method="newton", penalty=pen)
    est.fit((record.times, record.states))
    ref = amle_newton(record, model, np.eye(2), pen)
    np.testing.assert_allclose(est.mu_, ref.mu_hat, rtol=1e-12)


def test_auto_picks_newton_without_structure():
    model = ModelSpec(1, 1, lambda mu, x: -mu * x, form1_diffusion(constant(np.eye(1))),
                      state_independent_diffusion=True)
    x = np.exp(-np.linspace(0, 1, 101))[:, None]
    est = AMLEDriftEstimator(model, vartheta=[[1.0]]).fit((np.linspace(0, 1, 101), x))
    assert est.method_ == "newton"


@pytest.mark.parametrize("bad", [dict(method="bogus"), dict(vartheta=[[-1.0, 0], [0, 1]])])
def test_invalid_hyperparameters(record, bad):
    with pytest.raises(ValidationError):
        AMLEDriftEstimator(ou_kron_model(2), **bad).fit(record)


def test_bad_inputs(record):
    with pytest.raises(ValidationError):
        QVDiffusionEstimator(ou_kron_model(2)).fit(np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        QVDiffusionEstimator(ou_kron_model(3)).fit(record)
    with pytest.raises(ValidationError):
        QVDiffusionEstimator("model").fit(record)
