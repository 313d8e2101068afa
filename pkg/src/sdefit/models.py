"""Built-in models addressable by name from the CLI.

Each builder takes a parameter dict (missing keys fall back to defaults) and
returns ``(model, theta0, x0)``.

``ou1d``
    ``dX = -mu X dt + sqrt(vartheta) dW``; keys ``mu``, ``vartheta``, ``x0``.
``ou-nd``
    ``dX = (g - H X) dt + kappa dW`` with ``vartheta = kappa kappa^T``,
    drift parameter ``mu = vec([g, -H])``; keys ``g``, ``H``, ``vartheta``, ``x0``.
``linear-drift-demo``
    two-dimensional drift ``B0(x) mu`` with
    ``B0(x) = [[1, -x1, 0], [0, -x2, -x1]]``, Form-1 diffusion with ``a0 = I``.
``form1-demo``
    OU-type drift, Form-1 diffusion ``a0(x) = (1 + x1^2 / (1 + x1^2)) I``.
``form2-demo``
    OU-type drift, Form-2 diffusion ``sigma0(x) = diag(1, 1.5 + 0.5 tanh(x1))``.
"""

from __future__ import annotations

import numpy as np

from .core import Form1, Form2, OUTag, Parameter, constant, form1_diffusion, form2_diffusion
from .core import kron_drift, linear_drift
from .exceptions import ConfigError, SDEFitError


def _get(params, key, default, prefix):
    try:
        return np.asarray(params.get(key, default), dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}.{key}", "must be numeric") from None


def _check_keys(params, allowed, prefix):
    for key in params:
        if key not in allowed:
            raise ConfigError(f"{prefix}.{key}", f"unknown parameter (allowed: {', '.join(allowed)})")


def _ou_block(params, prefix, d_default=2):
    g = _get(params, "g", np.zeros(d_default), prefix).reshape(-1)
    d = g.size
    H = _get(params, "H", np.eye(d), prefix)
    vt = _get(params, "vartheta", np.eye(d), prefix)
    if H.shape != (d, d):
        raise ConfigError(f"{prefix}.H", f"must be a {d}x{d} matrix")
    if vt.shape != (d, d):
        raise ConfigError(f"{prefix}.vartheta", f"must be a {d}x{d} matrix")
    return g, H, vt


def _beta(x):
    x = np.asarray(x, dtype=float)
    return np.concatenate([np.ones(x.shape[:-1] + (1,)), x], axis=-1)


def _x0(params, default, prefix):
    x0 = _get(params, "x0", default, prefix).reshape(-1)
    if x0.size != np.size(default):
        raise ConfigError(f"{prefix}.x0", f"must have length {np.size(default)}")
    return x0


def _theta(mu, vt, prefix):
    try:
        return Parameter(mu, vt)
    except SDEFitError as exc:
        raise ConfigError(f"{prefix}.vartheta", str(exc)) from None


def ou1d(params, prefix="model.params"):
    _check_keys(params, ("mu", "vartheta", "x0"), prefix)
    mu = float(_get(params, "mu", 1.0, prefix))
    vt = _get(params, "vartheta", 2.0, prefix).reshape(1, 1)
    a0 = constant(np.eye(1))
    model = linear_drift(lambda x: -np.asarray(x, dtype=float)[..., None], 1, 1,
                         form1_diffusion(a0), Form1(a0), ou=OUTag(np.zeros(1), np.array([[mu]])),
                         state_independent_diffusion=True, name="ou1d")
    return model, _theta([mu], vt, prefix), _x0(params, [0.0], prefix)


def ou_nd(params, prefix="model.params"):
    _check_keys(params, ("g", "H", "vartheta", "x0"), prefix)
    g, H, vt = _ou_block(params, prefix)
    d = g.size
    s0 = constant(np.eye(d))
    model = kron_drift(_beta, d, d + 1, form2_diffusion(s0), Form2(s0), ou=OUTag(g, H),
                       state_independent_diffusion=True, name="ou-nd")
    mu = np.hstack([g[:, None], -H]).reshape(-1, order="F")
    mean = np.linalg.solve(H, g) if np.linalg.matrix_rank(H) == d else np.zeros(d)
    return model, _theta(mu, vt, prefix), _x0(params, mean, prefix)


def _demo_B0(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (2, 3))
    out[..., 0, 0] = 1.0
    out[..., 0, 1] = -x[..., 0]
    out[..., 1, 1] = -x[..., 1]
    out[..., 1, 2] = -x[..., 0]
    return out


def linear_drift_demo(params, prefix="model.params"):
    _check_keys(params, ("mu", "vartheta", "x0"), prefix)
    mu = _get(params, "mu", [0.5, 1.0, 0.4], prefix).reshape(-1)
    if mu.size != 3:
        raise ConfigError(f"{prefix}.mu", "must have length 3")
    vt = _get(params, "vartheta", [[1.0, 0.2], [0.2, 0.5]], prefix)
    a0 = constant(np.eye(2))
    g = np.array([mu[0], 0.0])
    H = np.array([[mu[1], 0.0], [mu[2], mu[1]]])
    model = linear_drift(_demo_B0, 2, 3, form1_diffusion(a0), Form1(a0), ou=OUTag(g, H),
                         state_independent_diffusion=True, name="linear-drift-demo")
    return model, _theta(mu, vt, prefix), _x0(params, np.linalg.solve(H, g), prefix)


def _form1_a0(x):
    x = np.asarray(x, dtype=float)
    s = 1.0 + x[..., 0] ** 2 / (1.0 + x[..., 0] ** 2)
    return s[..., None, None] * np.eye(x.shape[-1])


def _form2_sigma0(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.5 + 0.5 * np.tanh(x[..., 0])
    return out


def _demo_ou(params, prefix):
    _check_keys(params, ("g", "H", "vartheta", "x0"), prefix)
    g = _get(params, "g", [0.5, -0.5], prefix).reshape(-1)
    H = _get(params, "H", [[1.0, 0.3], [0.0, 1.5]], prefix)
    vt = _get(params, "vartheta", [[1.0, 0.3], [0.3, 0.5]], prefix)
    if g.size != 2 or H.shape != (2, 2) or vt.shape != (2, 2):
        raise ConfigError(prefix, "demo models are two-dimensional")
    return g, H, vt


def form1_demo(params, prefix="model.params"):
    g, H, vt = _demo_ou(params, prefix)
    model = kron_drift(_beta, 2, 3, form1_diffusion(_form1_a0), Form1(_form1_a0), name="form1-demo")
    mu = np.hstack([g[:, None], -H]).reshape(-1, order="F")
    return model, _theta(mu, vt, prefix), _x0(params, np.linalg.solve(H, g), prefix)


def form2_demo(params, prefix="model.params"):
    g, H, vt = _demo_ou(params, prefix)
    model = kron_drift(_beta, 2, 3, form2_diffusion(_form2_sigma0), Form2(_form2_sigma0), name="form2-demo")
    mu = np.hstack([g[:, None], -H]).reshape(-1, order="F")
    return model, _theta(mu, vt, prefix), _x0(params, np.linalg.solve(H, g), prefix)


BUILTIN_MODELS = {
    "ou1d": ou1d,
    "ou-nd": ou_nd,
    "linear-drift-demo": linear_drift_demo,
    "form1-demo": form1_demo,
    "form2-demo": form2_demo,
}


def build_model(name, params=None, prefix="model"):
    """``(model, theta0, x0)`` for a built-in model name."""
    if name not in BUILTIN_MODELS:
        raise ConfigError(f"{prefix}.name", f"unknown model {name!r} (choose from {', '.join(BUILTIN_MODELS)})")
    params = {} if params is None else params
    if not isinstance(params, dict):
        raise ConfigError(f"{prefix}.params", "must be a mapping")
    return BUILTIN_MODELS[name](params, f"{prefix}.params")
