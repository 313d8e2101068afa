"""Path simulation on the original and the rescaled clock.

All noise comes from :mod:`sdefit.rng`: the normal driving component ``j``
of internal step ``s`` sits at position ``s * d + j`` of stream
``cfg.stream`` under key ``cfg.seed``. Euler and exact-OU runs with the same
config therefore share their Gaussian inputs, and so do original- and
scaled-clock runs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numba as nb
import numpy as np

from .core import DiscreteRecord, Parameter, RecordMoments, ScalingRegime
from .exceptions import Blowup, ValidationError
from .linalg import check_stable, expm, psd_sqrt, solve_lyapunov, sym
from .rng import _as_seed, _as_stream, fill_normals_kernel, normals

BLOWUP_NORM = 1e12
CLOCKS = ("original", "scaled")
_CHUNK = 4096


@dataclass(frozen=True)
class SimConfig:
    x0: tuple
    regime: ScalingRegime
    substeps: int = 16
    seed: int = 0
    clock: str = "original"
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if int(self.substeps) < 1:
            raise ValidationError("substeps must be >= 1")
        if self.clock not in CLOCKS:
            raise ValidationError(f"clock must be one of {CLOCKS}")
        _as_seed(self.seed)
        _as_stream(self.stream)

    @property
    def x0_array(self):
        return np.array(self.x0, dtype=float)

    def with_stream(self, stream):
        return SimConfig(self.x0, self.regime, self.substeps, self.seed, self.clock, stream)

    def to_dict(self):
        out = asdict(self)
        out["x0"] = list(self.x0)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["regime"] = ScalingRegime(**data["regime"])
        return cls(**data)


def _times(cfg):
    reg = cfg.regime
    gap = reg.gap if cfg.clock == "original" else reg.scaled_gap
    scale = 1.0 if cfg.clock == "original" else reg.epsilon
    return gap * np.arange(reg.m + 1), scale


# exact OU ------------------------------------------------------------------


def ou_transition(g, H, vartheta, h):
    """Exact transition over time ``h``: ``X' = Phi X + c + L Z``.

    ``V = F - Phi F Phi^T`` is evaluated as the integral
    ``int_0^h e^{-Hs} vartheta e^{-H^T s} ds`` through one block matrix
    exponential, which avoids cancellation when ``h`` is tiny.
    """
    H = check_stable(H)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    vt = np.atleast_2d(np.asarray(vartheta, dtype=float))
    d = H.shape[0]
    Phi = expm(-H * h)
    c = (np.eye(d) - Phi) @ np.linalg.solve(H, g)
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = H
    block[:d, d:] = vt
    block[d:, d:] = -H.T
    E = expm(block * h)
    V = sym(Phi @ E[:d, d:])
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        L = psd_sqrt(V)
    return Phi, c, L


@nb.njit(cache=True, nogil=True, inline="always")
def _ou_step(x, tmp, Phi, c, L, z, off):
    d = x.shape[0]
    for i in range(d):
        acc = c[i]
        for j in range(d):
            acc += Phi[i, j] * x[j] + L[i, j] * z[off + j]
        tmp[i] = acc
    big = False
    for i in range(d):
        x[i] = tmp[i]
        if not abs(tmp[i]) < 1e12:
            big = True
    return big


@nb.njit(cache=True, nogil=True)
def _ou_path_kernel(x0, Phi, c, L, seed, stream, m, K, out):
    d = x0.shape[0]
    x = x0.copy()
    tmp = np.empty(d)
    out[0, :] = x
    per = max(1, _CHUNK // K)
    buf = np.empty(per * K * d)
    flags = np.empty(per * K * d, dtype=np.bool_)
    i = 0
    while i < m:
        nobs = min(per, m - i)
        nz = nobs * K * d
        fill_normals_kernel(buf[:nz], flags[:nz], seed, stream, i * K * d)
        off = 0
        for _ in range(nobs):
            for _k in range(K):
                if _ou_step(x, tmp, Phi, c, L, buf, off):
                    return 1
                off += d
            i += 1
            out[i, :] = x
    return 0


@nb.njit(cache=True, nogil=True)
def _ou_moments_kernel(x0, Phi, c, L, seed, stream, m, K, zz, zd, qv):
    d = x0.shape[0]
    x = x0.copy()
    prev = x0.copy()
    tmp = np.empty(d)
    per = max(1, _CHUNK // K)
    buf = np.empty(per * K * d)
    flags = np.empty(per * K * d, dtype=np.bool_)
    zz[:, :] = 0.0
    zd[:, :] = 0.0
    qv[:, :] = 0.0
    i = 0
    while i < m:
        nobs = min(per, m - i)
        nz = nobs * K * d
        fill_normals_kernel(buf[:nz], flags[:nz], seed, stream, i * K * d)
        off = 0
        for _ in range(nobs):
            for _k in range(K):
                if _ou_step(x, tmp, Phi, c, L, buf, off):
                    return 1
                off += d
            i += 1
            for a in range(d):
                dxa = x[a] - prev[a]
                zd[0, a] += dxa
                zz[0, a + 1] += prev[a]
                for b in range(d):
                    zz[a + 1, b + 1] += prev[a] * prev[b]
                    zd[a + 1, b] += prev[a] * (x[b] - prev[b])
                    qv[a, b] += dxa * (x[b] - prev[b])
            for a in range(d):
                prev[a] = x[a]
    zz[0, 0] = m
    for a in range(d):
        zz[a + 1, 0] = zz[0, a + 1]
    return 0


@nb.njit(cache=True, nogil=True)
def _ou_moments_kernel_1d(x0, Phi, c, L, seed, stream, m, K, zz, zd, qv):
    # scalar specialisation of _ou_moments_kernel for d == 1
    phi = Phi[0, 0]
    cc = c[0]
    ll = L[0, 0]
    x = x0[0]
    per = max(1, _CHUNK // K)
    buf = np.empty(per * K)
    flags = np.empty(per * K, dtype=np.bool_)
    s_x = 0.0
    s_xx = 0.0
    s_d = 0.0
    s_xd = 0.0
    s_dd = 0.0
    i = 0
    while i < m:
        nobs = min(per, m - i)
        fill_normals_kernel(buf[:nobs * K], flags[:nobs * K], seed, stream, i * K)
        if K == 1:
            for q in range(nobs):
                y = phi * x + cc + ll * buf[q]
                dx = y - x
                s_x += x
                s_xx += x * x
                s_d += dx
                s_xd += x * dx
                s_dd += dx * dx
                x = y
        else:
            off = 0
            for q in range(nobs):
                y = x
                for _k in range(K):
                    y = phi * y + cc + ll * buf[off]
                    off += 1
                dx = y - x
                s_x += x
                s_xx += x * x
                s_d += dx
                s_xd += x * dx
                s_dd += dx * dx
                x = y
        i += nobs
        if not abs(x) < 1e12:
            return 1
    zz[0, 0] = m
    zz[0, 1] = s_x
    zz[1, 0] = s_x
    zz[1, 1] = s_xx
    zd[0, 0] = s_d
    zd[1, 0] = s_xd
    qv[0, 0] = s_dd
    return 0


@nb.njit(cache=True, nogil=True)
def _ou_moments_kernel_2d(x0, Phi, c, L, seed, stream, m, K, zz, zd, qv):
    # scalar specialisation of _ou_moments_kernel for d == 2
    p00, p01, p10, p11 = Phi[0, 0], Phi[0, 1], Phi[1, 0], Phi[1, 1]
    l00, l01, l10, l11 = L[0, 0], L[0, 1], L[1, 0], L[1, 1]
    c0, c1 = c[0], c[1]
    x1 = x0[0]
    x2 = x0[1]
    per = max(1, _CHUNK // K)
    buf = np.empty(per * K * 2)
    flags = np.empty(per * K * 2, dtype=np.bool_)
    a1 = a2 = a11 = a12 = a22 = 0.0
    d1 = d2 = 0.0
    e11 = e12 = e21 = e22 = 0.0
    q11 = q12 = q22 = 0.0
    i = 0
    while i < m:
        nobs = min(per, m - i)
        nz = nobs * K * 2
        fill_normals_kernel(buf[:nz], flags[:nz], seed, stream, i * K * 2)
        off = 0
        for q in range(nobs):
            y1 = x1
            y2 = x2
            for _k in range(K):
                z1 = buf[off]
                z2 = buf[off + 1]
                off += 2
                t1 = p00 * y1 + p01 * y2 + c0 + l00 * z1 + l01 * z2
                y2 = p10 * y1 + p11 * y2 + c1 + l10 * z1 + l11 * z2
                y1 = t1
            dx1 = y1 - x1
            dx2 = y2 - x2
            a1 += x1
            a2 += x2
            a11 += x1 * x1
            a12 += x1 * x2
            a22 += x2 * x2
            d1 += dx1
            d2 += dx2
            e11 += x1 * dx1
            e12 += x1 * dx2
            e21 += x2 * dx1
            e22 += x2 * dx2
            q11 += dx1 * dx1
            q12 += dx1 * dx2
            q22 += dx2 * dx2
            x1 = y1
            x2 = y2
        i += nobs
        if not (abs(x1) < 1e12 and abs(x2) < 1e12):
            return 1
    zz[0, 0] = m
    zz[0, 1] = zz[1, 0] = a1
    zz[0, 2] = zz[2, 0] = a2
    zz[1, 1] = a11
    zz[1, 2] = zz[2, 1] = a12
    zz[2, 2] = a22
    zd[0, 0] = d1
    zd[0, 1] = d2
    zd[1, 0] = e11
    zd[1, 1] = e12
    zd[2, 0] = e21
    zd[2, 1] = e22
    qv[0, 0] = q11
    qv[0, 1] = qv[1, 0] = q12
    qv[1, 1] = q22
    return 0


_MOMENT_KERNELS = {1: _ou_moments_kernel_1d, 2: _ou_moments_kernel_2d}


def _ou_setup(g, H, vartheta, cfg):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    d = H.shape[0]
    x0 = cfg.x0_array
    if x0.size != d:
        raise ValidationError("x0 has the wrong dimension")
    # the rescaled process sampled at eps * t has the law of X at t
    Phi, c, L = ou_transition(g, H, vartheta, cfg.regime.gap / cfg.substeps)
    return x0, np.ascontiguousarray(Phi), c, np.ascontiguousarray(L)


def exact_ou(g, H, vartheta, cfg):
    """Record of ``dX = (g - H X) dt + kappa dW`` from exact Gaussian transitions.

    ``cfg.substeps`` internal exact steps are taken per observation gap; the
    value 1 is all that is needed for exactness, larger values couple the
    path to an Euler run with the same config.
    """
    x0, Phi, c, L = _ou_setup(g, H, vartheta, cfg)
    out = np.empty((cfg.regime.m + 1, x0.size))
    status = _ou_path_kernel(x0, Phi, c, L, _as_seed(cfg.seed), _as_stream(cfg.stream),
                             cfg.regime.m, int(cfg.substeps), out)
    if status:
        raise Blowup("exact OU path exceeded the explosion guard")
    times, scale = _times(cfg)
    return DiscreteRecord(times, out, scale)


def exact_ou_moments(g, H, vartheta, cfg):
    """:class:`RecordMoments` of the record :func:`exact_ou` would return.

    The path is never stored, so memory stays O(d^2) for any ``m``.
    """
    x0, Phi, c, L = _ou_setup(g, H, vartheta, cfg)
    d = x0.size
    zz = np.empty((d + 1, d + 1))
    zd = np.empty((d + 1, d))
    qv = np.empty((d, d))
    kernel = _MOMENT_KERNELS.get(d, _ou_moments_kernel)
    status = kernel(x0, Phi, c, L, _as_seed(cfg.seed), _as_stream(cfg.stream),
                    cfg.regime.m, int(cfg.substeps), zz, zd, qv)
    if status:
        raise Blowup("exact OU path exceeded the explosion guard")
    return RecordMoments(cfg.regime.m, cfg.regime.gap, zz, zd, qv)


# Euler-Maruyama ------------------------------------------------------------


def euler_maruyama_batch(model, theta, cfg, streams):
    """Euler paths for several noise streams at once.

    Returns
    -------
    states : ndarray (R, m + 1, d)
        Observation-time states; paths that exploded are NaN throughout.
    failed : ndarray of bool (R,)
    """
    if not isinstance(theta, Parameter):
        raise ValidationError("theta must be a Parameter")
    d = model.dim_state
    x0 = cfg.x0_array
    if x0.size != d or theta.mu.size != model.dim_drift_param:
        raise ValidationError("model dimensions do not match theta / x0")
    streams = [_as_stream(s) for s in streams]
    R = len(streams)
    reg = cfg.regime
    K = int(cfg.substeps)
    if cfg.clock == "original":
        h, drift_scale, noise_scale = reg.gap / K, 1.0, 1.0
    else:
        h, drift_scale, noise_scale = reg.scaled_gap / K, 1.0 / reg.epsilon, 1.0 / np.sqrt(reg.epsilon)
    sqrt_h = np.sqrt(h)
    mu, vt = theta.mu, theta.vartheta
    sigma_const = None
    if model.state_independent_diffusion:
        sigma_const = np.asarray(model.diffusion(vt, x0[None, :]), dtype=float)[0]

    X = np.tile(x0, (R, 1))
    out = np.empty((R, reg.m + 1, d))
    out[:, 0] = X
    failed = np.zeros(R, dtype=bool)
    total = reg.m * K
    seed = _as_seed(cfg.seed)
    dh = drift_scale * h
    nh = noise_scale * sqrt_h
    s = 0
    while s < total:
        n = min(_CHUNK, total - s)
        Z = np.stack([normals(seed, st, s * d, (n, d)) for st in streams], axis=1)
        if sigma_const is not None:
            Z = nh * (Z @ sigma_const.T)
        for q in range(n):
            if sigma_const is None:
                S = np.asarray(model.diffusion(vt, X), dtype=float)
                noise = nh * np.einsum("rij,rj->ri", S, Z[q])
            else:
                noise = Z[q]
            X = X + dh * np.asarray(model.drift(mu, X), dtype=float) + noise
            s += 1
            if not np.abs(X).max() < BLOWUP_NORM:
                bad = ~(np.abs(X) < BLOWUP_NORM).all(axis=1)
                failed |= bad
                # failed rows are parked at the origin and reported as NaN
                X[bad] = 0.0
            if s % K == 0:
                out[:, s // K] = X
    out[failed] = np.nan
    return out, failed


def euler_maruyama(model, theta, cfg):
    """Single Euler-Maruyama record with ``cfg.substeps`` internal steps per gap.

    Raises
    ------
    Blowup
        If the state norm exceeds 1e12.
    """
    states, failed = euler_maruyama_batch(model, theta, cfg, [cfg.stream])
    if failed[0]:
        raise Blowup("Euler path exceeded the explosion guard")
    times, scale = _times(cfg)
    return DiscreteRecord(times, states[0], scale)


def ou_stationary_law(g, H, vartheta):
    """Mean ``H^{-1} g`` and covariance ``F`` (Lyapunov solution) of the OU law."""
    H = check_stable(H)
    mean = np.linalg.solve(H, np.atleast_1d(np.asarray(g, dtype=float)))
    return mean, solve_lyapunov(H, vartheta)
