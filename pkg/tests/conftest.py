import numpy as np
import pytest

from sdefit.core import Form1, Form2, OUTag, Parameter, constant, form1_diffusion, form2_diffusion
from sdefit.core import kron_drift, linear_drift


def beta_affine(x):
    x = np.asarray(x, dtype=float)
    return np.concatenate([np.ones(x.shape[:-1] + (1,)), x], axis=-1)


def ou1d_model(mu=1.0):
    a0 = constant(np.eye(1))
    return linear_drift(lambda x: -np.asarray(x, dtype=float)[..., None], 1, 1,
                        form1_diffusion(a0), Form1(a0), ou=OUTag(np.zeros(1), np.array([[mu]])),
                        state_independent_diffusion=True)


def ou_kron_model(d, g=None, H=None):
    s0 = constant(np.eye(d))
    tag = None if H is None else OUTag(np.asarray(g, dtype=float), np.asarray(H, dtype=float))
    return kron_drift(beta_affine, d, d + 1, form2_diffusion(s0), Form2(s0), ou=tag,
                      state_independent_diffusion=True)


def random_spd(rng, d, lo=0.3):
    A = rng.normal(size=(d, d))
    return A @ A.T + lo * np.eye(d)


def random_stable(rng, d, shift=0.5):
    A = rng.normal(size=(d, d))
    return A + (shift - np.linalg.eigvals(A).real.min()) * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ou1d():
    return ou1d_model(), Parameter([1.0], [[2.0]])
