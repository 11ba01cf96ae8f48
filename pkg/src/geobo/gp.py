"""Gaussian-process regression with geodesic SE kernels.

Hyperparameters are ``theta`` (signal variance), ``beta`` (inverse squared
length scale) and ``noise`` (observation variance). :func:`gp_nll` works on
their logarithms. :func:`fit_gp` optimizes a box-bounded reparameterization
with the Riemannian trust-region solver on a flat manifold.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import _core
from .kernels import GeodesicSEKernel, as_inputs, cross_kernel
from .manifolds import Euclidean
from .optim import TrustRegionConfig, trust_region_minimize

LOG_2PI = np.log(2.0 * np.pi)
JITTERS = (0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5)

THETA_BOUNDS = (0.05, 20.0)
BETA_EXCESS_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-6, 1.0)


class FactorizationError(np.linalg.LinAlgError):
    pass


def cholesky_jitter(K):
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Returns ``(L, jitter)``.
    """
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    n = len(K)
    for jit in JITTERS:
        try:
            return np.linalg.cholesky(K + (jit * scale) * np.eye(n)), jit * scale
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError("Cholesky failed even with jitter 1e-5")


def _nll_parts(K, y, noise):
    """Value of the negative log marginal likelihood and ``A = K^-1 - alpha alpha^T``."""
    n = len(y)
    Kn = K + noise * np.eye(n)
    L, _ = cholesky_jitter(Kn)
    alpha = cho_solve((L, True), y)
    val = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(L)))) + 0.5 * n * LOG_2PI
    Linv = solve_triangular(L, np.eye(n), lower=True)
    A = Linv.T @ Linv - np.outer(alpha, alpha)
    return val, A


def gp_nll(log_params, inputs, y, mode="sphere", with_input_grad=False):
    """Negative log marginal likelihood and its gradient.

    Parameters
    ----------
    log_params : array_like
        ``(log theta, log beta, log noise)``.
    inputs : ndarray
        Latent inputs in the layout of ``mode``.
    y : ndarray
        Targets.

    Returns
    -------
    value : float
    grad : ndarray
        Derivatives w.r.t. the three log-parameters.
    input_grad : ndarray
        Only when ``with_input_grad``: derivative w.r.t. the input rows
        (treating sphere rows as free vectors entering through their cosines).
    """
    lt, lb, ls = (float(v) for v in log_params)
    theta, beta, noise = np.exp(lt), np.exp(lb), np.exp(ls)
    A_in = as_inputs(inputs, mode)
    y = np.asarray(y, dtype=float)
    K, D2 = cross_kernel(A_in, A_in, theta, beta, mode)
    K = 0.5 * (K + K.T)
    val, A = _nll_parts(K, y, noise)
    H = 0.5 * A
    g = np.array([
        float(np.sum(H * K)),
        float(-beta * np.sum(H * K * D2)),
        float(noise * np.trace(H)),
    ])
    if not with_input_grad:
        return val, g
    if mode == "sphere":
        G = H * _core.sphere_dk_dc(K, D2, beta)
        np.fill_diagonal(G, 0.0)
        gin = 2.0 * G @ A_in
    else:
        M = H * K
        gin = -4.0 * beta * (M.sum(axis=1)[:, None] * A_in - M @ A_in)
    return val, g, gin


class _Box:
    """Logistic map from an unbounded scalar onto ``[log lo, log hi]``."""

    def __init__(self, lo, hi):
        self.a, self.b = np.log(lo), np.log(hi)

    def forward(self, u):
        s = 1.0 / (1.0 + np.exp(-np.clip(u, -50, 50)))
        return self.a + (self.b - self.a) * s, (self.b - self.a) * s * (1.0 - s)

    def inverse(self, logv):
        q = (np.clip(logv, self.a, self.b) - self.a) / (self.b - self.a)
        q = np.clip(q, 1e-9, 1 - 1e-9)
        return np.log(q / (1.0 - q))


@dataclass(frozen=True)
class HyperTransform:
    """Bounded reparameterization ``raw (3,) -> (log theta, log beta, log noise)``.

    ``beta = beta_min + exp(b)`` with ``exp(b)`` kept in ``BETA_EXCESS_BOUNDS``.
    """

    beta_min: float = 0.0
    theta_bounds: tuple = THETA_BOUNDS
    beta_excess_bounds: tuple = BETA_EXCESS_BOUNDS
    noise_bounds: tuple = NOISE_BOUNDS

    def forward(self, raw):
        lt, jt = _Box(*self.theta_bounds).forward(raw[0])
        le, je = _Box(*self.beta_excess_bounds).forward(raw[1])
        ls, js = _Box(*self.noise_bounds).forward(raw[2])
        excess = np.exp(le)
        beta = self.beta_min + excess
        # d log beta / d raw1 = (excess / beta) * d le / d raw1
        jac = np.array([jt, je * excess / beta, js])
        return np.array([lt, np.log(beta), ls]), jac

    def inverse(self, theta, beta, noise):
        excess = max(beta - self.beta_min, self.beta_excess_bounds[0])
        return np.array([
            _Box(*self.theta_bounds).inverse(np.log(theta)),
            _Box(*self.beta_excess_bounds).inverse(np.log(excess)),
            _Box(*self.noise_bounds).inverse(np.log(noise)),
        ])


@dataclass
class GpState:
    """A conditioned GP. Targets are stored in original units.

    ``y_shift``/``y_scale`` standardize the targets internally; the posterior
    is reported in original units.
    """

    inputs: np.ndarray
    targets: np.ndarray
    kernel: GeodesicSEKernel
    noise_var: float
    mode: str = "sphere"
    y_shift: float = 0.0
    y_scale: float = 1.0
    gram_factor: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)
    jitter: float = 0.0

    def __post_init__(self):
        self.inputs = as_inputs(self.inputs, self.mode)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.gram_factor is None:
            K, _ = cross_kernel(self.inputs, self.inputs, self.kernel.theta, self.kernel.beta, self.mode)
            K = 0.5 * (K + K.T) + self.noise_var * np.eye(len(K))
            self.gram_factor, self.jitter = cholesky_jitter(K)
            ys = (self.targets - self.y_shift) / self.y_scale
            self.alpha = cho_solve((self.gram_factor, True), ys)

    @property
    def log_params(self):
        return np.log([self.kernel.theta, self.kernel.beta, self.noise_var])

    def nll(self):
        ys = (self.targets - self.y_shift) / self.y_scale
        return gp_nll(self.log_params, self.inputs, ys, self.mode)[0]

    def posterior(self, points, return_grad=False):
        """Latent mean and variance at ``points`` (original target units).

        With ``return_grad`` also returns derivatives of mean and variance
        with respect to the query rows (sphere rows as free vectors).
        """
        Q = as_inputs(points, self.mode)
        th, be = self.kernel.theta, self.kernel.beta
        Ks, D2 = cross_kernel(Q, self.inputs, th, be, self.mode)
        mean_s = Ks @ self.alpha
        V = solve_triangular(self.gram_factor, Ks.T, lower=True)
        var_s = np.maximum(th - np.sum(V * V, axis=0), 0.0)
        mean = self.y_shift + self.y_scale * mean_s
        var = self.y_scale ** 2 * var_s
        if not return_grad:
            return mean, var
        # dk*/dq for each query row: (m, n, p)
        if self.mode == "sphere":
            dk = _core.sphere_dk_dc(Ks, D2, be)[:, :, None] * self.inputs[None, :, :]
        else:
            diff = Q[:, None, :] - self.inputs[None, :, :]
            dk = (-2.0 * be * Ks)[:, :, None] * diff
        w = cho_solve((self.gram_factor, True), Ks.T).T
        dmean = self.y_scale * np.einsum("mnp,n->mp", dk, self.alpha)
        dvar = -2.0 * self.y_scale ** 2 * np.einsum("mnp,mn->mp", dk, w)
        return mean, var, dmean, dvar


def gp_posterior(state: GpState, z):
    """Posterior mean and variance at one point."""
    m, v = state.posterior(z)
    return float(m[0]), float(v[0])


def standardize(y):
    y = np.asarray(y, dtype=float)
    shift = float(np.mean(y))
    scale = float(np.std(y))
    if not np.isfinite(scale) or scale < 1e-12:
        scale = 1.0
    return shift, scale


def default_inits(beta_min, mode):
    """A few deterministic starting hyperparameters ``(theta, beta, noise)``."""
    base = max(beta_min, 1e-3)
    if mode == "sphere":
        betas = [beta_min + 1.0, beta_min + 5.0]
    else:
        betas = [0.1, 1.0]
    return [(1.0, b if b > base else base * 1.5, 1e-2) for b in betas]


def fit_gp(inputs, y, mode="sphere", beta_min=0.0, inits=None, tr_cfg: Optional[TrustRegionConfig] = None,
           standardize_targets=True):
    """Fit hyperparameters by minimizing the negative log marginal likelihood.

    Each start is refined by trust-region steps on the raw box-bounded
    coordinates; the best result is returned as a :class:`GpState`.
    """
    X = as_inputs(inputs, mode)
    y = np.asarray(y, dtype=float)
    shift, scale = standardize(y) if standardize_targets else (0.0, 1.0)
    ys = (y - shift) / scale
    tf = HyperTransform(beta_min)
    man = Euclidean(3)
    cfg = tr_cfg or TrustRegionConfig(delta_max=5.0, max_outer=50, grad_tol=1e-5)

    def fg(raw):
        lp, jac = tf.forward(raw)
        try:
            val, g = gp_nll(lp, X, ys, mode)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros(3)
        return val, g * jac

    best = None
    for th, be, no in (inits or default_inits(beta_min, mode)):
        raw0 = tf.inverse(th, be, no)
        f0, _ = fg(raw0)
        if not np.isfinite(f0):
            continue
        res = trust_region_minimize(None, None, man, raw0, cfg, fun_and_grad=fg)
        if best is None or res.fun < best[0]:
            best = (res.fun, res.x)
    if best is None:
        raise FactorizationError("no finite starting point for the GP fit")
    lp, _ = tf.forward(best[1])
    theta, beta, noise = np.exp(lp)
    beta = max(beta, beta_min)
    kern = GeodesicSEKernel(theta, beta, beta_min)
    return GpState(X, y, kern, float(noise), mode, shift, scale)
