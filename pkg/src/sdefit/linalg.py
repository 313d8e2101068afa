"""Small dense linear-algebra toolkit.

Everything here works on plain ``numpy`` arrays. ``vec`` is column-stacking
throughout, so that ``vec(B @ X @ A.T) == kron(A, B) @ vec(X)``.
"""

import warnings

import numpy as np
import scipy.linalg as sla

from .exceptions import IllConditioned, NotSymmetric, UnstableH

COND_LIMIT = 1e12


def sym(A):
    """Symmetric part ``(A + A^T) / 2``; works on stacks of matrices."""
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def vec(A):
    """Column-stacking vectorization of a 2-D array."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return A.reshape(-1, order="F")


def unvec(v, n_rows):
    """Inverse of :func:`vec` for a matrix with ``n_rows`` rows."""
    return np.asarray(v, dtype=float).reshape(n_rows, -1, order="F")


def kron(A, B):
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def commutation_matrix(m, n=None):
    """Matrix ``K`` with ``K @ vec(A) == vec(A.T)`` for ``A`` of shape (m, n)."""
    n = m if n is None else n
    K = np.zeros((m * n, m * n))
    for i in range(m):
        for j in range(n):
            K[i * n + j, j * m + i] = 1.0
    return K


def psd_sqrt(A):
    """Unique p.s.d. square root of a symmetric p.s.d. matrix (or stack).

    Eigenvalues below zero (rounding noise) are clamped to zero.

    Raises
    ------
    NotSymmetric
        If ``||A - A^T||_F > 1e-8 ||A||_F`` for any matrix of the stack.
    """
    A = np.asarray(A, dtype=float)
    scale = np.linalg.norm(A, axis=(-2, -1))
    asym = np.linalg.norm(A - np.swapaxes(A, -1, -2), axis=(-2, -1))
    if np.any(asym > 1e-8 * scale):
        raise NotSymmetric("psd_sqrt needs a symmetric matrix")
    w, V = np.linalg.eigh(sym(A))
    w = np.sqrt(np.clip(w, 0.0, None))
    B = (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
    return sym(B)


def checked_solve(A, B, error=IllConditioned, what="linear system"):
    """Solve ``A X = B`` by LU with partial pivoting, refusing bad conditioning.

    The reciprocal 1-norm condition number is estimated by LAPACK ``gecon``
    from the LU factors; if ``cond > COND_LIMIT`` the ``error`` class is raised.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise error(f"{what}: matrix has non-finite entries")
    anorm = np.linalg.norm(A, 1)
    if anorm == 0.0:
        raise error(f"{what}: matrix is zero")
    with warnings.catch_warnings():
        # exact singularity is reported through rcond below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    rcond, _ = sla.lapack.dgecon(lu, anorm, norm="1")
    if not rcond > 1.0 / COND_LIMIT:
        raise error(f"{what}: condition number exceeds {COND_LIMIT:.0e}")
    return sla.lu_solve((lu, piv), B, check_finite=False)


def batched_spd_solve(A, b, error=IllConditioned, what="diffusion matrix"):
    """Solve ``A[i] x[i] = b[i]`` for a stack of symmetric p.d. matrices.

    ``b`` may be a stack of vectors (n, d) or of matrices (n, d, k). The
    2-norm condition number of each ``A[i]`` is checked from its eigenvalues.
    """
    A = np.asarray(A, dtype=float)
    w = np.linalg.eigvalsh(sym(A))
    lo, hi = w[..., 0], w[..., -1]
    if not np.all(np.isfinite(w)) or np.any(lo <= 0) or np.any(hi > COND_LIMIT * lo):
        raise error(f"{what}: not positive definite or condition number exceeds {COND_LIMIT:.0e}")
    b = np.asarray(b, dtype=float)
    if b.ndim == A.ndim - 1:
        return np.linalg.solve(A, b[..., None])[..., 0]
    return np.linalg.solve(A, b)


def check_stable(H):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if np.any(np.linalg.eigvals(H).real <= 0):
        raise UnstableH("H must have eigenvalues with positive real part")
    return H


def solve_lyapunov(H, Q):
    """Solve ``H F + F H^T = Q`` for ``F``.

    Uses the vectorized system ``(I kron H + H kron I) vec(F) = vec(Q)``,
    which is fine for the small dimensions this package targets.
    """
    H = check_stable(H)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = H.shape[0]
    eye = np.eye(d)
    system = np.kron(eye, H) + np.kron(H, eye)
    F = unvec(checked_solve(system, vec(Q), what="Lyapunov system"), d)
    return sym(F)


def expm(A):
    """Matrix exponential (Pade scaling-and-squaring from scipy)."""
    return sla.expm(np.atleast_2d(np.asarray(A, dtype=float)))
