"""Geodesic squared-exponential kernels and Gram-matrix validity checks.

Inputs come in one of two layouts, selected by ``mode``:

``"sphere"``
    rows are unit vectors; the distance is the great-circle angle.
``"euclid"``
    rows are feature vectors; the distance is Euclidean. SPD matrices enter
    this mode through :func:`spd_features`, the isometric vectorization of
    their matrix logarithm, which turns Euclidean distance into the
    Log-Euclidean distance.
"""

from dataclasses import dataclass

import numpy as np

from . import _core
from . import linalg as la
from .manifolds import SPD, Euclidean, Sphere, _as_rng

GRAM_NEG_TOL = 1e-8
MODES = ("sphere", "euclid")


class KernelInvalidError(ValueError):
    """The Gram matrix has a clearly negative eigenvalue."""

    def __init__(self, message, beta=None, beta_min=None, min_eig=None):
        super().__init__(message)
        self.beta = beta
        self.beta_min = beta_min
        self.min_eig = min_eig


@dataclass(frozen=True)
class GeodesicSEKernel:
    """``k(d) = theta * exp(-beta * d^2)`` with ``beta >= beta_min``."""

    theta: float = 1.0
    beta: float = 1.0
    beta_min: float = 0.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.beta_min < 0:
            raise ValueError("beta_min must be nonnegative")
        if not self.beta > 0 or self.beta < self.beta_min:
            raise ValueError(f"beta={self.beta} must be positive and at least beta_min={self.beta_min}")

    def __call__(self, d):
        return kernel_eval(self, d)


def kernel_eval(k: GeodesicSEKernel, d):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    return k.theta * np.exp(-k.beta * d * d)


def spd_features(X):
    """``vec_sym(logm(X))`` for one matrix or a stack."""
    return la.vec_sym(la.logm_spd(np.asarray(X, dtype=float)))


def as_inputs(points, mode):
    """Coerce points to the 2-D array layout used by ``mode``."""
    A = np.asarray(points, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if mode not in MODES:
        raise ValueError(f"unknown kernel mode {mode!r}")
    return A


def cross_kernel(A, B, theta, beta, mode):
    """Kernel block and squared distances between row sets ``A`` and ``B``."""
    if mode == "sphere":
        return _core.sphere_se(A, B, theta, beta)
    return _core.euclid_se(A, B, theta, beta)


def gram(points, k: GeodesicSEKernel, mode="sphere", check=True):
    """Symmetric Gram matrix with a positive-semidefiniteness guard.

    Eigenvalues in ``(-1e-8, 0)`` are lifted by a matching diagonal jitter;
    anything below ``-1e-8`` raises :class:`KernelInvalidError`.
    """
    A = as_inputs(points, mode)
    K, _ = cross_kernel(A, A, k.theta, k.beta, mode)
    K = la.sym(K)
    if check:
        lam = float(np.linalg.eigvalsh(K)[0])
        if lam < -GRAM_NEG_TOL:
            raise KernelInvalidError(
                f"Gram matrix not PSD (min eigenvalue {lam:.3e}) at beta={k.beta:.6g}, "
                f"beta_min={k.beta_min:.6g}", k.beta, k.beta_min, lam)
        if lam < 0:
            K = K + (-lam + 1e-15) * np.eye(len(K))
    return K


def spd_latent_features_fast(log_X, W):
    """Features ``vec_sym(W^T log(X_i) W)`` approximating ``vec_sym(log(W^T X_i W))``."""
    W = np.asarray(W, dtype=float)
    return la.vec_sym(W.T @ np.asarray(log_X, dtype=float) @ W)


def spd_latent_gram_fast(log_X, W, k: GeodesicSEKernel):
    """Latent Gram from the approximation ``log(W^T X W) ~ W^T log(X) W``.

    ``log_X`` holds the precomputed ``logm(X_i)``. Because the projection is
    linear, ``||W^T (log X_i - log X_j) W||`` equals the distance between the
    per-point features, so the pairwise difference table never needs to be
    materialized.
    """
    return gram(spd_latent_features_fast(log_X, W), k, mode="euclid")


def _sample_sets(manifold, n_samples, n_sets, rng):
    if isinstance(manifold, Sphere):
        return [manifold.random_points(n_samples, rng) for _ in range(n_sets)]
    raise TypeError("only spheres need a sampled beta_min")


def _min_eig(Zs, beta):
    worst = np.inf
    for Z in Zs:
        K, _ = _core.sphere_se(Z, Z, 1.0, beta)
        worst = min(worst, float(np.linalg.eigvalsh(la.sym(K))[0]))
    return worst


def estimate_beta_min(manifold, n_samples=50, rng_seed=0, n_sets=20, tol=1e-7,
                      bracket=(1e-3, 1e3), rel_precision=1e-3, safety=1.1):
    """Smallest ``beta`` keeping sampled geodesic SE Grams PSD.

    Bisects (in log space) on the predicate ``min_i lambda_min(K_i) >= -tol``
    over ``n_sets`` random point sets of size ``n_samples``. The per-set
    threshold fluctuates, so the bisection result is multiplied by ``safety``
    to hold on fresh samples. Euclidean and Log-Euclidean SPD kernels are PD
    for every ``beta`` and return 0.
    """
    if n_samples < 10:
        raise ValueError("n_samples must be at least 10")
    if isinstance(manifold, (Euclidean, SPD)):
        return 0.0
    rng = _as_rng(rng_seed)
    Zs = _sample_sets(manifold, n_samples, n_sets, rng)
    lo, hi = bracket

    def ok(beta):
        return _min_eig(Zs, beta) >= -tol

    if not ok(hi):
        raise RuntimeError(f"bisection bracket failure: beta={hi} still yields indefinite Grams")
    if ok(lo):
        return float(lo) * safety
    while hi / lo > 1.0 + rel_precision:
        mid = np.sqrt(lo * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return float(hi) * safety
