"""Symmetric matrix functions computed through an eigendecomposition.

All routines accept a single ``(n, n)`` matrix or a stack ``(..., n, n)``.
"""

import numpy as np

EIG_FLOOR = 1e-12
NEG_EIG_REJECT = -1e-8


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix that must be SPD has a clearly negative eigenvalue."""


def sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _spd_eigh(A):
    w, U = np.linalg.eigh(sym(A))
    if np.any(w < NEG_EIG_REJECT):
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (min eigenvalue {w.min():.3e})"
        )
    return np.maximum(w, EIG_FLOOR), U


def _rebuild(w, U):
    return (U * w[..., None, :]) @ np.swapaxes(U, -1, -2)


def funm_sym(A, fun):
    """Apply ``fun`` to the eigenvalues of a symmetric matrix (no PD check)."""
    w, U = np.linalg.eigh(sym(A))
    return _rebuild(fun(w), U)


def logm_spd(X):
    w, U = _spd_eigh(X)
    return _rebuild(np.log(w), U)


def sqrtm_spd(X):
    w, U = _spd_eigh(X)
    return _rebuild(np.sqrt(w), U)


def invsqrtm_spd(X):
    w, U = _spd_eigh(X)
    return _rebuild(1.0 / np.sqrt(w), U)


def inv_spd(X):
    w, U = _spd_eigh(X)
    return _rebuild(1.0 / w, U)


def expm_sym(S):
    return funm_sym(S, np.exp)


def _divided_differences(w, f, df):
    """First divided differences of ``f`` at the eigenvalues ``w``."""
    wi = w[..., :, None]
    wj = w[..., None, :]
    diff = wi - wj
    close = np.abs(diff) <= 1e-9 * np.maximum(1.0, np.maximum(np.abs(wi), np.abs(wj)))
    safe = np.where(close, 1.0, diff)
    F = (f(wi) - f(wj)) / safe
    mid = 0.5 * (wi + wj)
    return np.where(close, df(np.broadcast_to(mid, F.shape)), F)


def frechet_sym(A, E, f, df, *, spd=False):
    """Frechet derivative ``Df(A)[E]`` of a symmetric matrix function.

    The operator is self-adjoint with respect to the Frobenius inner product,
    so the same call also pulls back gradients.
    """
    if spd:
        w, U = _spd_eigh(A)
    else:
        w, U = np.linalg.eigh(sym(A))
    Ut = np.swapaxes(U, -1, -2)
    F = _divided_differences(w, f, df)
    return U @ (F * (Ut @ sym(E) @ U)) @ Ut


def dlogm(X, E):
    return frechet_sym(X, E, np.log, lambda t: 1.0 / t, spd=True)


def dsqrtm(X, E):
    return frechet_sym(X, E, np.sqrt, lambda t: 0.5 / np.sqrt(t), spd=True)


def vec_sym(S):
    """Isometric vectorization of symmetric matrices (off-diagonals times sqrt 2)."""
    n = S.shape[-1]
    iu = np.triu_indices(n)
    weights = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return S[..., iu[0], iu[1]] * weights


def unvec_sym(v, n):
    iu = np.triu_indices(n)
    weights = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape[:-1] + (n, n))
    S[..., iu[0], iu[1]] = v * weights
    S[..., iu[1], iu[0]] = v * weights
    return S


def sym_dim(n):
    return n * (n + 1) // 2


def sym_size_from_dim(m):
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if sym_dim(n) != m:
        raise ValueError(f"{m} is not a triangular number")
    return n
