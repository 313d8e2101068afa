"""Model, parameter and data containers shared by every estimator.

Model callables are vectorized over leading axes: ``drift(mu, x)`` accepts
``x`` of shape ``(..., d)`` and returns ``(..., d)``; ``diffusion(vartheta, x)``
returns ``(..., d, d)``; ``drift_jacobian(mu, x)`` returns ``(..., d, n0)``.
They must be pure functions of their arguments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import NonFiniteOutput, ValidationError
from .linalg import psd_sqrt, sym

GAP_RTOL = 1e-12
SPAN_RTOL = 1e-9


@dataclass(frozen=True)
class Parameter:
    """The pair ``theta = (mu, vartheta)``."""

    mu: np.ndarray
    vartheta: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)).copy()
        vt = np.atleast_2d(np.asarray(self.vartheta, dtype=float)).copy()
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise ValidationError("mu must be a finite vector")
        check_spd(vt, "vartheta")
        mu.setflags(write=False)
        vt.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "vartheta", vt)


def check_spd(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} has non-finite entries")
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise ValidationError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(sym(A))[0] <= 0:
        raise ValidationError(f"{name} must be positive definite")
    return A


# structural tags ---------------------------------------------------------


@dataclass(frozen=True)
class LinearDrift:
    """Drift of the form ``b(mu, x) = B0(x) @ mu``; ``B0`` returns (..., d, n0)."""

    B0: Callable


@dataclass(frozen=True)
class LinearDriftKron:
    """Drift ``b = A @ beta0(x)`` with ``mu = vec(A)``, i.e. ``B0 = beta0^T kron I``."""

    beta0: Callable
    dim_beta: int


@dataclass(frozen=True)
class Form1:
    """``a(vartheta, x) = a0(x) @ vartheta`` (the product must be symmetric)."""

    a0: Callable


@dataclass(frozen=True)
class Form2:
    """``sigma(vartheta, x) = sigma0(x) @ kappa`` with ``kappa kappa^T = vartheta``."""

    sigma0: Callable


@dataclass(frozen=True)
class OUTag:
    """Marks the model as ``dX = (g - H X) dt + kappa dW``."""

    g: np.ndarray
    H: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    dim_state: int
    dim_drift_param: int
    drift: Callable
    diffusion: Callable
    drift_jacobian: Optional[Callable] = None
    structure: object = None
    diffusion_form: object = None
    ou: Optional[OUTag] = None
    state_independent_diffusion: bool = False
    name: str = "custom"

    def B0(self, x):
        """Design matrix ``B0(x)`` for linear-in-parameter drifts."""
        if isinstance(self.structure, LinearDrift):
            return np.asarray(self.structure.B0(x), dtype=float)
        if isinstance(self.structure, LinearDriftKron):
            beta = np.asarray(self.structure.beta0(x), dtype=float)
            d = self.dim_state
            eye = np.eye(d)
            # (beta^T kron I)[a, j*d + b] = beta[j] * delta_ab
            return np.einsum("...j,ab->...ajb", beta, eye).reshape(beta.shape[:-1] + (d, -1))
        raise ValidationError("model has no linear drift structure")

    def jacobian(self, mu, x):
        """``D_mu b(mu, x)`` from the callable, the linear structure, or None."""
        if self.drift_jacobian is not None:
            return np.asarray(self.drift_jacobian(mu, x), dtype=float)
        if self.structure is not None:
            return self.B0(x)
        return None


def linear_drift(B0, d, n0, diffusion, diffusion_form=None, **kw):
    """Build a :class:`ModelSpec` with drift ``B0(x) @ mu``."""

    def drift(mu, x):
        return np.einsum("...ij,j->...i", B0(x), np.asarray(mu, dtype=float))

    def jac(mu, x):
        return B0(x)

    return ModelSpec(d, n0, drift, diffusion, jac, LinearDrift(B0), diffusion_form, **kw)


def kron_drift(beta0, d, m0, diffusion, diffusion_form=None, **kw):
    """Build a :class:`ModelSpec` with drift ``A @ beta0(x)``, ``mu = vec(A)``."""

    def drift(mu, x):
        A = np.asarray(mu, dtype=float).reshape(m0, d).T
        return np.einsum("ij,...j->...i", A, beta0(x))

    model = ModelSpec(d, d * m0, drift, diffusion, None, LinearDriftKron(beta0, m0),
                      diffusion_form, **kw)
    return model


def form1_diffusion(a0):
    """``sigma(vartheta, x) = (a0(x) vartheta)^{1/2}``."""

    def diffusion(vartheta, x):
        return psd_sqrt(np.asarray(a0(x), dtype=float) @ vartheta)

    return diffusion


def form2_diffusion(sigma0):
    """``sigma(vartheta, x) = sigma0(x) kappa`` with ``kappa = vartheta^{1/2}``."""

    def diffusion(vartheta, x):
        return np.asarray(sigma0(x), dtype=float) @ psd_sqrt(vartheta)

    return diffusion


def constant(value):
    """Vectorized callable returning ``value`` at every state."""
    value = np.asarray(value, dtype=float)

    def fn(x):
        x = np.asarray(x)
        return np.broadcast_to(value, x.shape[:-1] + value.shape)

    return fn


def eval_a(model, vartheta, x):
    """``a(vartheta, x) = sigma sigma^T``, symmetrized; ``x`` may be a stack."""
    s = np.asarray(model.diffusion(np.asarray(vartheta, dtype=float), np.asarray(x, dtype=float)))
    a = sym(s @ np.swapaxes(s, -1, -2))
    if not np.all(np.isfinite(a)):
        raise NonFiniteOutput("diffusion callable returned non-finite values")
    return a


def a_matrices(model, vartheta, X):
    """Stack of ``a(vartheta, x_i)`` using structural shortcuts when available."""
    X = np.asarray(X, dtype=float)
    vt = np.asarray(vartheta, dtype=float)
    form = model.diffusion_form
    if model.state_independent_diffusion:
        a = eval_a(model, vt, X[:1])[0]
        return np.broadcast_to(a, X.shape[:-1] + a.shape)
    if isinstance(form, Form1):
        a = sym(np.asarray(form.a0(X), dtype=float) @ vt)
    elif isinstance(form, Form2):
        s0 = np.asarray(form.sigma0(X), dtype=float)
        a = sym(s0 @ vt @ np.swapaxes(s0, -1, -2))
    else:
        return eval_a(model, vt, X)
    if not np.all(np.isfinite(a)):
        raise NonFiniteOutput("diffusion callable returned non-finite values")
    return a


def check_drift_dissipativity(model, mu, radius_grid, sample_count=256, seed=0, q0=2.0):
    """Worst-case radial drift ``<x, b(mu, x)>`` over spheres of given radii.

    In one dimension the sphere is the two points ``{-r, r}`` and is
    enumerated exactly; otherwise ``sample_count`` points are drawn
    uniformly on each sphere.

    Returns
    -------
    dict
        ``radius``, ``max_inner`` (max of the inner product per shell),
        ``normalized`` (``max_inner / r**q0``), ``flagged`` (``max_inner >= 0``)
        and ``any_flagged``.
    """
    from .rng import normals

    radii = np.asarray(radius_grid, dtype=float)
    if radii.ndim != 1 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValidationError("radius_grid must be positive and increasing")
    d = model.dim_state
    if d == 1:
        dirs = np.array([[-1.0], [1.0]])
    else:
        z = normals(seed, 0, 0, (sample_count, d))
        dirs = z / np.linalg.norm(z, axis=1, keepdims=True)
    mu = np.asarray(mu, dtype=float)
    worst = np.empty(radii.size)
    for k, r in enumerate(radii):
        pts = r * dirs
        inner = np.einsum("ni,ni->n", pts, model.drift(mu, pts))
        worst[k] = inner.max()
    flagged = worst >= 0
    return {
        "radius": radii,
        "max_inner": worst,
        "normalized": worst / radii**q0,
        "flagged": flagged,
        "any_flagged": bool(flagged.any()),
    }


# data ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingRegime:
    """Span ``T = 1/epsilon`` observed every ``gap`` time units, ``m`` gaps."""

    epsilon: float
    gap: float
    m: int
    gap_exponent: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValidationError("epsilon must lie in (0, 1]")
        if not self.gap > 0 or self.m < 1:
            raise ValidationError("gap must be positive and m >= 1")
        if abs(self.m * self.gap * self.epsilon - 1) > SPAN_RTOL:
            raise ValidationError("m * gap * epsilon must equal 1")

    @property
    def span(self):
        return 1.0 / self.epsilon

    @property
    def scaled_gap(self):
        """Observation gap on the rescaled clock, ``epsilon * gap``."""
        return self.epsilon * self.gap

    @classmethod
    def from_gap(cls, epsilon, gap):
        m = int(round(1.0 / (gap * epsilon)))
        return cls(float(epsilon), 1.0 / (m * epsilon), m)

    @classmethod
    def from_exponent(cls, epsilon, gamma):
        """``gap ~ epsilon**gamma``, rounded so that ``m`` is an integer."""
        m = max(1, int(round(epsilon ** (-(1.0 + gamma)))))
        return cls(float(epsilon), 1.0 / (m * epsilon), m, float(gamma))


@dataclass(frozen=True)
class DiscreteRecord:
    """Observations ``states[i] = X(times[i])`` on a uniform grid.

    ``time_scale`` is 1 for data on the original clock and ``epsilon`` for
    data from the rescaled process, whose clock runs ``1/epsilon`` times
    faster. Estimators only ever use :attr:`original_gap`.
    """

    times: np.ndarray
    states: np.ndarray
    time_scale: float = 1.0
    gap: float = field(init=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).copy()
        x = np.asarray(self.states, dtype=float).copy()
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or x.ndim != 2 or t.size != x.shape[0]:
            raise ValidationError("times must be a vector with one entry per state row")
        if t.size < 2:
            raise ValidationError("a record needs at least one increment")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(x)):
            raise ValidationError("record contains non-finite values")
        m = t.size - 1
        gap = (t[-1] - t[0]) / m
        if not gap > 0:
            raise ValidationError("times must be increasing")
        if np.any(np.abs(np.diff(t) - gap) > GAP_RTOL * gap + 4 * np.finfo(float).eps * np.abs(t[1:])):
            raise ValidationError(
                "times are not uniformly spaced (gap-uniformity invariant "
                "|t_i - t_{i-1} - gap| <= 1e-12 * gap violated)"
            )
        if not self.time_scale > 0:
            raise ValidationError("time_scale must be positive")
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "gap", float(gap))

    @property
    def m(self):
        return self.times.size - 1

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def span(self):
        return float(self.times[-1] - self.times[0])

    @property
    def original_gap(self):
        return self.gap / self.time_scale

    @property
    def epsilon(self):
        """Inverse of the span measured on the original clock."""
        return 1.0 / (self.m * self.original_gap)

    @property
    def increments(self):
        return np.diff(self.states, axis=0)

    @property
    def left(self):
        return self.states[:-1]

    @classmethod
    def from_states(cls, states, gap, t0=0.0, time_scale=1.0):
        states = np.asarray(states, dtype=float)
        times = t0 + gap * np.arange(states.shape[0])
        return cls(times, states, time_scale)

    def to_csv(self, path):
        """Write ``t,x1,...,xd`` rows with 17 significant digits."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j + 1}" for j in range(self.dim)])
            for t, row in zip(self.times, self.states):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path, time_scale=1.0):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "t":
            raise ValidationError(f"{path}: header must be t,x1,...,xd")
        header = [h.strip() for h in rows[0]]
        if header[1:] != [f"x{j + 1}" for j in range(len(header) - 1)] or len(header) < 2:
            raise ValidationError(f"{path}: header must be t,x1,...,xd")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
        if data.ndim != 2 or data.shape[1] != len(header):
            raise ValidationError(f"{path}: ragged rows")
        return cls(data[:, 0], data[:, 1:], time_scale)


@dataclass(frozen=True)
class RecordMoments:
    """Sufficient statistics of a record for affine drifts and constant diffusions.

    With ``z_i = (1, x_i)``: ``zz = sum z_{i-1} z_{i-1}^T``,
    ``zd = sum z_{i-1} dx_i^T`` and ``qv = sum dx_i dx_i^T``.
    """

    m: int
    original_gap: float
    zz: np.ndarray
    zd: np.ndarray
    qv: np.ndarray

    @property
    def dim(self):
        return self.qv.shape[0]

    @property
    def epsilon(self):
        return 1.0 / (self.m * self.original_gap)


def record_moments(record):
    X = record.left
    dX = record.increments
    Z = np.hstack([np.ones((X.shape[0], 1)), X])
    return RecordMoments(record.m, record.original_gap, Z.T @ Z, Z.T @ dX, dX.T @ dX)


def affine_coefficients(fn, d, probes=3, seed=0, rtol=1e-10):
    """Decompose ``fn(x) = C[0] + sum_k x_k C[k+1]`` and verify affinity.

    Returns
    -------
    ndarray of shape (d + 1,) + fn(x).shape, or None if ``fn`` is not affine.
    """
    from .rng import normals

    base = np.asarray(fn(np.zeros(d)), dtype=float)
    C = [base]
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        C.append(np.asarray(fn(e), dtype=float) - base)
    C = np.array(C)
    pts = 2.0 * normals(seed, 1, 0, (probes, d))
    for x in pts:
        pred = C[0] + np.tensordot(x, C[1:], axes=1)
        got = np.asarray(fn(x), dtype=float)
        if np.abs(pred - got).max() > rtol * (1 + np.abs(got).max()):
            return None
    return C
