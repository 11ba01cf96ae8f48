"""Nested projections between spheres and between SPD manifolds.

Sphere
------
A level ``k`` step maps ``S^k -> S^(k-1)`` using an axis ``v_k`` in ``S^k`` and
a radius ``r_k``. Because the rotation sends ``v_k`` to the north pole, the
truncated rotation annihilates ``v_k`` and a step reduces to
``m_k(x) = T_k x / ||T_k x||`` with ``T_k`` the first ``k`` rows of ``R(v_k)``.
The composed map is ``m(x) = T x / ||T x||`` with ``T`` having orthonormal
rows, so ``m`` is independent of the radii. Only the row space of ``T``
matters for latent distances, which lets surrogate fitting work on a
Grassmannian; :func:`axes_from_frame` converts back to axes.

SPD
---
``m(X) = W^T X W`` and the right inverse places ``Z`` in the leading block of
``R M R^T`` with ``R = (W V)``.
"""

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import linalg as la
from .manifolds import SPD, Euclidean, Product, ProductVector, orthonormalize
from .optim import (
    AugLagConfig,
    Constraint,
    ConstraintSet,
    NonFiniteObjectiveError,
    TrustRegionConfig,
    augmented_lagrangian_minimize,
)

_HALF_PI = 0.5 * np.pi
SINGULAR_TOL = 1e-9
ANTIPODE_CUTOFF = -1.0 + 1e-12


class SingularProjectionError(ValueError):
    """The point sits on (or opposite to) the projection axis."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class InvalidParamsError(ValueError):
    pass


# ---------------------------------------------------------------- sphere


def rotation_to_north(v):
    """Rotation ``R`` in SO(k+1) with ``R v = (0, ..., 0, 1)``.

    The rotation acts in the plane spanned by ``v`` and the north pole. For
    ``v`` (numerically) equal to the south pole a fixed half-turn in the
    ``(e_1, north)`` plane is used.
    """
    v = np.asarray(v, dtype=float)
    m = v.size
    north = np.zeros(m)
    north[-1] = 1.0
    c = v[-1]
    if c < ANTIPODE_CUTOFF:
        R = np.eye(m)
        R[0, 0] = -1.0
        R[-1, -1] = -1.0
        return R
    Kmat = np.outer(north, v) - np.outer(v, north)
    return np.eye(m) + Kmat + (Kmat @ Kmat) / (1.0 + c)


def _check_radius(r):
    if not 0.0 < r <= _HALF_PI + 1e-15:
        raise ValueError(f"radius must lie in (0, pi/2], got {r}")


def sphere_project_step(x, v, r):
    """One nested-sphere projection ``S^D -> S^(D-1)``, evaluated as written.

    The point is moved onto the small sphere at geodesic distance ``r`` from
    ``v``, rotated so ``v`` becomes the north pole, truncated, and rescaled by
    ``1 / sin(r)``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise ValueError("point and axis dimensions differ")
    _check_radius(r)
    dist = 2.0 * np.arctan2(np.linalg.norm(x - v), np.linalg.norm(x + v))
    if dist < SINGULAR_TOL or dist > np.pi - SINGULAR_TOL:
        raise SingularProjectionError(
            f"point is within {SINGULAR_TOL} of the axis or its antipode (distance {dist:.3e})")
    p = (np.sin(r) * x + np.sin(dist - r) * v) / np.sin(dist)
    R = rotation_to_north(v)
    return (R[:-1] @ p) / np.sin(r)


def sphere_unproject_step(z, v, r):
    """Inverse of one projection step: ``R^T (sin(r) z ; cos(r))``."""
    _check_radius(r)
    z = np.asarray(z, dtype=float)
    R = rotation_to_north(v)
    return R.T @ np.append(np.sin(r) * z, np.cos(r))


@dataclass(frozen=True)
class NestedSphereParams:
    """Axes ``[v_D, ..., v_(d+1)]`` (``v_k`` has length ``k+1``) and radii."""

    axes: tuple
    radii: tuple

    def __post_init__(self):
        axes = tuple(np.array(a, dtype=float) for a in self.axes)
        radii = tuple(float(r) for r in self.radii)
        if len(axes) != len(radii):
            raise ValueError("axes and radii must have the same length")
        for i, a in enumerate(axes):
            if i > 0 and a.size != axes[i - 1].size - 1:
                raise ValueError("axis dimensions must decrease by one per level")
            if abs(np.linalg.norm(a) - 1.0) > 1e-10:
                raise ValueError("axes must be unit vectors")
            a.setflags(write=False)
        for r in radii:
            _check_radius(r)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "radii", radii)

    @property
    def D(self):
        return self.axes[0].size - 1 if self.axes else None

    @property
    def d(self):
        return self.axes[-1].size - 2 if self.axes else None

    def with_radii(self, radii):
        return NestedSphereParams(self.axes, tuple(radii))

    @classmethod
    def random(cls, D, d, rng=None, radius_range=(np.pi / 4, np.pi / 2)):
        """Axes uniform on their spheres, radii uniform in ``(lo, hi]``."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        axes = []
        for k in range(D, d, -1):
            a = rng.standard_normal(k + 1)
            axes.append(a / np.linalg.norm(a))
        lo, hi = radius_range
        radii = hi - (hi - lo) * rng.random(len(axes))
        return cls(tuple(axes), tuple(radii))


def sphere_project(x, params: NestedSphereParams):
    """Composition ``m = m_(d+1) o ... o m_D`` of the step projections."""
    z = np.asarray(x, dtype=float)
    for v, r in zip(params.axes, params.radii):
        level = v.size - 1
        if z.size != v.size:
            raise ValueError(f"point of length {z.size} does not match level {level}")
        try:
            z = sphere_project_step(z, v, r)
        except SingularProjectionError as exc:
            raise SingularProjectionError(f"level {level}: {exc}", level=level) from None
    return z


def sphere_unproject(z, params: NestedSphereParams):
    """Composition ``m_D^dagger o ... o m_(d+1)^dagger``."""
    x = np.asarray(z, dtype=float)
    for v, r in zip(reversed(params.axes), reversed(params.radii)):
        x = sphere_unproject_step(x, v, r)
    return x


def composed_projection(axes):
    """Matrix ``T`` with orthonormal rows such that ``m(x) = T x / ||T x||``."""
    if not axes:
        raise ValueError("empty axis list")
    T = np.eye(axes[0].size)
    for v in axes:
        T = rotation_to_north(v)[:-1] @ T
    return T


def sphere_project_batch(X, T):
    """Vectorized projection of the rows of ``X`` through ``T``."""
    Y = np.atleast_2d(X) @ T.T
    n = np.linalg.norm(Y, axis=1, keepdims=True)
    if np.any(n < np.sin(SINGULAR_TOL)):
        raise SingularProjectionError("a point lies on the normal space of the latent subspace")
    return Y / n


def axes_from_frame(U, ref_axes=None):
    """Axes whose composed projection has row space ``span(U)``.

    ``U`` is a ``(D+1) x (d+1)`` orthonormal frame. At every level the axis is
    the unit vector of the orthogonal complement closest to ``ref_axes`` (or
    the north pole), which keeps the choice deterministic and smooth.
    """
    U = orthonormalize(np.asarray(U, dtype=float))
    m, q = U.shape
    axes = []
    for lvl, k in enumerate(range(m, q, -1)):
        # complement of span(U) in R^k
        P = np.eye(k) - U @ U.T
        if ref_axes is not None and lvl < len(ref_axes):
            ref = np.asarray(ref_axes[lvl], dtype=float)
        else:
            ref = np.zeros(k)
            ref[-1] = 1.0
        v = P @ ref
        nv = np.linalg.norm(v)
        if nv < 1e-8:
            w, Q = np.linalg.eigh(P)
            v = Q[:, -1]
            nv = np.linalg.norm(v)
        v = v / nv
        # one Gram-Schmidt pass keeps v orthogonal to U at roundoff level
        v = v - U @ (U.T @ v)
        v /= np.linalg.norm(v)
        axes.append(v)
        U = orthonormalize(rotation_to_north(v)[:-1] @ U)
    return tuple(axes)


def _lift_matrices(axes):
    """``[L_D, ..., L_(d+1), L_d]`` with ``L_k`` mapping ``R^(k+1)`` into ``R^(D+1)``."""
    L = np.eye(axes[0].size)
    lifts = [L]
    for v in axes:
        L = L @ rotation_to_north(v)[:-1].T
        lifts.append(L)
    return lifts


def _radii_coefficients(radii):
    """Coefficients ``c = (a, b_D, ..., b_(d+1))`` and their Jacobian w.r.t. radii.

    ``m^dagger(z) = a L_d z + sum_k b_k L_k v_k`` with ``a = prod sin r`` and
    ``b_k = cos r_k prod_(j > k) sin r_j``.
    """
    r = np.asarray(radii, dtype=float)
    L = r.size
    s = np.sin(r)
    co = np.cos(r)
    c = np.empty(L + 1)
    J = np.zeros((L + 1, L))
    prefix = 1.0
    # index 0 of r is the outermost level D
    for k in range(L):
        c[1 + k] = co[k] * prefix
        for j in range(k):
            J[1 + k, j] = c[1 + k] * co[j] / s[j] if s[j] != 0 else 0.0
        J[1 + k, k] = -s[k] * prefix
        prefix *= s[k]
    c[0] = prefix
    for j in range(L):
        J[0, j] = prefix * co[j] / s[j]
    return c, J


def _reconstruction_design(X, Z, axes):
    """Rows ``P_i`` with ``x_i^T m^dagger(z_i) = P_i . c(radii)``."""
    lifts = _lift_matrices(axes)
    cols = [np.einsum("ij,ij->i", X, Z @ lifts[-1].T)]
    for L, v in zip(lifts[:-1], axes):
        cols.append(X @ (L @ v))
    return np.column_stack(cols)


def _acos_ratio(t):
    """``arccos(t) / sqrt(1 - t^2)`` with its limit 1 at ``t = 1``."""
    t = np.clip(t, -1.0, 1.0)
    out = np.ones_like(t)
    far = t < 1.0 - 1e-8
    out[far] = np.arccos(t[far]) / np.sqrt(1.0 - t[far] ** 2)
    e = 1.0 - t[~far]
    out[~far] = 1.0 - e / 3.0
    return out


def _radii_from_raw(u):
    return _HALF_PI / (1.0 + np.exp(-np.clip(u, -30.0, 30.0)))


def _raw_from_radii(r):
    r = np.minimum(np.asarray(r, dtype=float), _HALF_PI * (1 - 1e-9))
    q = r / _HALF_PI
    return np.log(q / (1.0 - q))


@dataclass
class RadiiFit:
    radii: tuple
    objective: float
    initial_objective: float
    converged: bool
    n_iter: int


def reconstruction_objective_sphere(X, Z, params: NestedSphereParams):
    """``sum_i d^2(x_i, m^dagger(z_i))`` evaluated with the step maps."""
    total = 0.0
    for x, z in zip(X, Z):
        y = sphere_unproject(z, params)
        total += (2.0 * np.arctan2(np.linalg.norm(x - y), np.linalg.norm(x + y))) ** 2
    return float(total)


def fit_reconstruction_sphere(X, Z, axes, starts=(np.pi / 6, np.pi / 3, np.pi / 2),
                              max_iter=500, tol=1e-20, init=None):
    """Fit radii minimizing ``sum_i d^2(x_i, m^dagger(z_i))`` for fixed axes.

    Gradient descent with Armijo backtracking on logistic-transformed radii,
    started from each constant value in ``starts`` (and ``init`` if given).
    The exact starting radii are also scored so the result never exceeds the
    best start.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if len(X) < 1 or len(X) != len(Z):
        raise ValueError("need at least one (x, z) pair of matching count")
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    L = len(axes)
    if L == 0:
        return RadiiFit((), 0.0, 0.0, True, 0)
    P = _reconstruction_design(X, Z, axes)

    def obj_raw(u):
        r = _radii_from_raw(u)
        c, Jc = _radii_coefficients(r)
        t = np.clip(P @ c, -1.0, 1.0)
        ang = np.arccos(t)
        val = float(np.sum(ang ** 2))
        dt = -2.0 * _acos_ratio(t)
        g_c = P.T @ dt
        dr_du = r * (1.0 - r / _HALF_PI)
        return val, (Jc.T @ g_c) * dr_du

    def obj_radii(r):
        c, _ = _radii_coefficients(r)
        return float(np.sum(np.arccos(np.clip(P @ c, -1.0, 1.0)) ** 2))

    candidates = [np.full(L, s) for s in starts]
    if init is not None:
        candidates.insert(0, np.asarray(init, dtype=float))
    best_r, best_f = None, np.inf
    init_f = np.inf
    converged_any = False
    total_iter = 0
    for r0 in candidates:
        f0 = obj_radii(r0)
        init_f = min(init_f, f0)
        if f0 < best_f:
            best_r, best_f = r0.copy(), f0
        u = _raw_from_radii(r0)
        f, g = obj_raw(u)
        step = 1.0
        conv = False
        for it in range(max_iter):
            total_iter += 1
            # diagonal scaling undoes the logistic saturation near pi/2
            r = _radii_from_raw(u)
            h = np.maximum((r * (1.0 - r / _HALF_PI)) ** 2, 1e-12)
            direction = g / h
            gd = float(g @ direction)
            if gd < tol:
                conv = True
                break
            while step > 1e-14:
                u_new = u - step * direction
                f_new, g_new = obj_raw(u_new)
                if f_new <= f - 1e-4 * step * gd:
                    break
                step *= 0.5
            else:
                conv = True
                break
            if f - f_new < 1e-15 * max(1.0, f) and f_new > 0:
                u, f, g = u_new, f_new, g_new
                conv = True
                break
            s_vec, y_vec = u_new - u, (g_new - g) / h
            u, f, g = u_new, f_new, g_new
            # Barzilai-Borwein trial step for the next backtracking search
            sy = float(s_vec @ y_vec)
            step = min(float(s_vec @ s_vec) / sy, 1e4) if sy > 0 else min(step * 2.0, 1e4)
        converged_any |= conv
        if f < best_f:
            best_r, best_f = _radii_from_raw(u), f
    best_r = np.clip(best_r, 1e-12, _HALF_PI)
    if not converged_any:
        warnings.warn("radius fit did not converge; returning the best iterate", RuntimeWarning)
    return RadiiFit(tuple(float(r) for r in best_r), float(obj_radii(best_r)), float(init_f),
                    converged_any, total_iter)


# ---------------------------------------------------------------- SPD


@dataclass(frozen=True)
class SpdNestedParams:
    W: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if np.linalg.norm(W.T @ W - np.eye(W.shape[1])) > 1e-10:
            raise ValueError("W must have orthonormal columns")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def D(self):
        return self.W.shape[0]

    @property
    def d(self):
        return self.W.shape[1]


@dataclass(frozen=True)
class SpdReconstructionParams:
    V: np.ndarray
    K: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        K = np.array(self.K, dtype=float)
        B = la.sym(np.array(self.B, dtype=float))
        if np.linalg.norm(V.T @ V - np.eye(V.shape[1])) > 1e-8:
            raise InvalidParamsError("V must have orthonormal columns")
        if np.linalg.eigvalsh(B).min() <= 0:
            raise InvalidParamsError("B must be positive definite")
        for a in (V, K, B):
            a.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "B", B)

    def check(self, W, tol=1e-8):
        if np.linalg.norm(W.T @ self.V) > tol:
            raise InvalidParamsError("W^T V must vanish")
        if spectral_norm(self.K) > 1.0 + tol:
            raise InvalidParamsError(f"K is not a contraction (norm {spectral_norm(self.K):.6g})")


def spectral_norm(K):
    return float(np.linalg.norm(K, 2)) if K.size else 0.0


def orthogonal_complement(W):
    """Orthonormal basis of the complement of ``span(W)``, deterministic."""
    D, d = W.shape
    Q, _ = np.linalg.qr(np.hstack([W, np.eye(D)]))
    V = Q[:, d:D]
    V = V - W @ (W.T @ V)
    return orthonormalize(V)


def spd_project(X, p: SpdNestedParams):
    """``Z = W^T X W``."""
    W = p.W if isinstance(p, SpdNestedParams) else np.asarray(p)
    Z = la.sym(np.swapaxes(W, -1, -2) @ np.asarray(X, dtype=float) @ W)
    if np.any(np.linalg.eigvalsh(Z) <= 0):
        raise la.NotPositiveDefiniteError("projected matrix is not positive definite")
    return Z


def _block_matrix(Z, K, S):
    """``[[Z, Z^1/2 K S], [S K^T Z^1/2, S^2]]`` for a stack of ``Z``."""
    Zh = la.sqrtm_spd(Z)
    C = Zh @ K @ S
    top = np.concatenate([Z, C], axis=-1)
    bot = np.concatenate([np.swapaxes(C, -1, -2), np.broadcast_to(S @ S, C.shape[:-2] + S.shape)],
                         axis=-1)
    return la.sym(np.concatenate([top, bot], axis=-2)), Zh


def spd_unproject(Z, p_m: SpdNestedParams, p_r: SpdReconstructionParams):
    """``X = R [[Z, Z^1/2 K B^1/2], [B^1/2 K^T Z^1/2, B]] R^T`` with ``R = (W V)``."""
    p_r.check(p_m.W)
    S = la.sqrtm_spd(p_r.B)
    M, _ = _block_matrix(np.asarray(Z, dtype=float), p_r.K, S)
    R = np.hstack([p_m.W, p_r.V])
    return la.sym(R @ M @ R.T)


def reconstruction_objective_spd(X, Z, W, p_r: SpdReconstructionParams):
    """``sum_i ||log X_i - log m^dagger(Z_i)||_F^2``."""
    Xr = spd_unproject(Z, SpdNestedParams(W), p_r)
    D = la.logm_spd(np.asarray(X)) - la.logm_spd(Xr)
    return float(np.sum(D * D))


@dataclass
class SpdFit:
    params: SpdReconstructionParams
    objective: float
    initial_objective: float
    trace: List[dict] = field(default_factory=list)


def fit_reconstruction_spd(X, Z, W, init: Optional[SpdReconstructionParams] = None,
                           al_cfg: Optional[AugLagConfig] = None, max_outer=60):
    """Fit ``(V, K, B)`` minimizing the Log-Euclidean reconstruction error.

    ``V`` is fixed to the orthonormal complement of ``W``: any other feasible
    ``V`` differs by an orthogonal factor that ``K`` and ``B`` absorb. The
    contraction constraint ``1 - ||K||_2 >= 0`` is handled by an augmented
    Lagrangian over ``R^(d x (D-d)) x S++^(D-d)`` with ``B = S^2``.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim == 2:
        X, Z = X[None], Z[None]
    W = np.asarray(W, dtype=float)
    D, d = W.shape
    V = orthogonal_complement(W)
    R = np.hstack([W, V])
    Lt = R.T @ la.logm_spd(X) @ R
    Zh_all = la.sqrtm_spd(Z)
    if init is not None:
        # re-express a warm start in the canonical V basis
        Q = V.T @ init.V
        K0 = np.asarray(init.K) @ Q.T
        S0 = la.sqrtm_spd(Q @ init.B @ Q.T)
        if spectral_norm(K0) >= 1.0:
            K0 = K0 * (0.99 / spectral_norm(K0))
    else:
        K0 = np.zeros((d, D - d))
        S0 = la.sqrtm_spd(np.mean(V.T @ X @ V, axis=0))
    man = Product([Euclidean(d, D - d), SPD(D - d)])

    def fun_and_grad(p):
        K, S = p
        C = Zh_all @ K @ S
        S2 = S @ S
        M = np.zeros_like(Lt)
        M[:, :d, :d] = Z
        M[:, :d, d:] = C
        M[:, d:, :d] = np.swapaxes(C, -1, -2)
        M[:, d:, d:] = S2
        try:
            Lm = la.logm_spd(M)
        except la.NotPositiveDefiniteError:
            return np.inf, ProductVector((np.zeros_like(K), np.zeros_like(S)))
        Delta = Lm - Lt
        val = float(np.sum(Delta * Delta))
        G = 2.0 * la.dlogm(M, Delta)
        G12 = G[:, :d, d:]
        G22 = G[:, d:, d:]
        gK = np.sum(2.0 * Zh_all @ G12 @ S, axis=0)
        ZK = Zh_all @ K
        gS = np.sum(la.sym(G22 @ S + S @ G22) + la.sym(2.0 * np.swapaxes(ZK, -1, -2) @ G12), axis=0)
        return val, ProductVector((gK, man.parts[1].egrad2rgrad(S, gS)))

    def c_fun(p):
        return 1.0 - spectral_norm(p[0])

    def c_grad(p):
        K = p[0]
        if K.size == 0:
            return ProductVector((np.zeros_like(K), np.zeros_like(p[1])))
        U, s, Vt = np.linalg.svd(K)
        return ProductVector((-np.outer(U[:, 0], Vt[0]), np.zeros_like(p[1])))

    cs = ConstraintSet([Constraint(c_fun, c_grad, "ineq")])
    x0 = (K0, S0)
    f0 = fun_and_grad(x0)[0]
    al_cfg = al_cfg or AugLagConfig(max_outer=max_outer, inner_grad_tol=1e-9)
    tr_cfg = TrustRegionConfig(delta_max=1.0, max_outer=100)
    try:
        res = augmented_lagrangian_minimize(None, None, cs, man, x0, al_cfg, tr_cfg,
                                            fun_and_grad=fun_and_grad)
        x_best, f_best, trace = res.x, res.fun, res.trace
    except NonFiniteObjectiveError as exc:
        # a trial step left the PD cone; keep the last accepted iterate
        x_best = exc.x if exc.x is not None else x0
        f_best = fun_and_grad(x_best)[0]
        trace = [dict(outer=0, f=f0), dict(outer=1, f=min(f0, f_best))]
    K, S = x_best
    if f0 < f_best:
        K, S = x0
    nK = spectral_norm(K)
    if nK > 1.0:
        K = K / nK
    obj = fun_and_grad((K, S))[0]
    if not np.isfinite(obj):
        (K, S), obj = x0, f0
    params = SpdReconstructionParams(V, K, la.sym(S @ S))
    return SpdFit(params, float(obj), float(f0), trace)
