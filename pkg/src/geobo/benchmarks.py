"""Benchmark test functions and embedded objectives ``f = base o coord o m``.

The base functions take real vectors. A latent manifold point is turned into a
vector by a fixed coordinate map:

* sphere: ``v = scale * z`` (ambient coordinates of ``z``);
* SPD: ``v = scale * vec_sym(logm(Z))``.

``scale`` stretches ``[-1, 1]`` to each function's usual domain.
"""

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from . import linalg as la
from .manifolds import SPD, Grassmann, Sphere, _as_rng
from .nested import (
    NestedSphereParams,
    SpdNestedParams,
    composed_projection,
    spd_project,
    sphere_project_batch,
)
from .optim import TrustRegionConfig, trust_region_minimize

KINDS = ("ackley", "rosenbrock", "styblinski_tang", "product_of_sines")
SCALES = {"ackley": 2.0, "rosenbrock": 2.0, "styblinski_tang": 1.0, "product_of_sines": math.pi}


def eval_ackley(v):
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(v * v, axis=-1) / n))
    b = -np.exp(np.sum(np.cos(2.0 * np.pi * v), axis=-1) / n)
    return a + b + 20.0 + np.e


def eval_rosenbrock(v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < 2:
        raise ValueError("Rosenbrock needs at least two coordinates")
    x, xn = v[..., :-1], v[..., 1:]
    return np.sum(100.0 * (xn - x * x) ** 2 + (x - 1.0) ** 2, axis=-1)


def eval_styblinski_tang(v):
    w = 5.0 * np.asarray(v, dtype=float)
    return 0.5 * np.sum(w ** 4 - 16.0 * w ** 2 + 5.0 * w, axis=-1)


def eval_product_of_sines(v):
    s = np.sin(np.asarray(v, dtype=float))
    return 100.0 * s[..., 0] * np.prod(s, axis=-1)


def grad_ackley(v):
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    r = np.sqrt(np.sum(v * v, axis=-1, keepdims=True) / n)
    ea = np.exp(-0.2 * r)
    safe = np.where(r > 0, r, 1.0)
    ga = np.where(r > 0, 4.0 * ea * v / (n * safe), 0.0)
    eb = np.exp(np.sum(np.cos(2.0 * np.pi * v), axis=-1, keepdims=True) / n)
    gb = eb * 2.0 * np.pi * np.sin(2.0 * np.pi * v) / n
    return ga + gb


def grad_rosenbrock(v):
    v = np.asarray(v, dtype=float)
    g = np.zeros_like(v)
    x, xn = v[..., :-1], v[..., 1:]
    t = xn - x * x
    g[..., :-1] += -400.0 * t * x + 2.0 * (x - 1.0)
    g[..., 1:] += 200.0 * t
    return g


def grad_styblinski_tang(v):
    w = 5.0 * np.asarray(v, dtype=float)
    return 2.5 * (4.0 * w ** 3 - 32.0 * w + 5.0)


def grad_product_of_sines(v):
    v = np.asarray(v, dtype=float)
    s = np.sin(v)
    c = np.cos(v)
    n = v.shape[-1]
    g = np.empty_like(v)
    for i in range(n):
        others = np.prod(np.delete(s, i, axis=-1), axis=-1)
        g[..., i] = c[..., i] * others
    g[..., 0] *= 2.0 * s[..., 0]
    g[..., 1:] *= s[..., 0][..., None]
    return 100.0 * g


_EVAL = {"ackley": eval_ackley, "rosenbrock": eval_rosenbrock,
         "styblinski_tang": eval_styblinski_tang, "product_of_sines": eval_product_of_sines}
_GRAD = {"ackley": grad_ackley, "rosenbrock": grad_rosenbrock,
         "styblinski_tang": grad_styblinski_tang, "product_of_sines": grad_product_of_sines}


@dataclass(frozen=True)
class BenchmarkFn:
    kind: str
    input_dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown benchmark {self.kind!r}; choose from {KINDS}")
        if self.input_dim < (2 if self.kind == "rosenbrock" else 1):
            raise ValueError("input dimension too small for this benchmark")

    @property
    def scale(self):
        return SCALES[self.kind]

    def __call__(self, v):
        return _EVAL[self.kind](v)

    def grad(self, v):
        return _GRAD[self.kind](v)


# ---------------------------------------------------------------- coordinates


def latent_coords(z, kind, scale):
    """Coordinate vector(s) fed to the base function."""
    if kind == "sphere":
        return scale * np.asarray(z, dtype=float)
    return scale * la.vec_sym(la.logm_spd(z))


def latent_value(z, kind, base: BenchmarkFn):
    return base(latent_coords(z, kind, base.scale))


def latent_egrad(z, kind, base: BenchmarkFn):
    """Euclidean gradient of the latent objective w.r.t. ``z``."""
    v = latent_coords(z, kind, base.scale)
    g = base.scale * base.grad(v)
    if kind == "sphere":
        return g
    n = np.shape(z)[-1]
    return la.dlogm(z, la.unvec_sym(g, n))


# ---------------------------------------------------------------- optimum oracle


@lru_cache(maxsize=None)
def f_star(kind, base_kind, d, eig_bounds=None, n_random=10_000, n_polish=30, seed=12345):
    """Minimum of the latent objective, estimated by dense sampling plus polishing.

    Sphere: minimum over ``S^d``. SPD: minimum over ``d x d`` SPD matrices
    whose eigenvalues lie in ``eig_bounds`` (every such matrix is reachable
    through the projection). Results are cached per argument tuple.
    """
    rng = np.random.default_rng(seed)
    if kind == "sphere":
        base = BenchmarkFn(base_kind, d + 1)
        S = Sphere(d)
        Z = S.random_points(n_random, rng)
        vals = base(base.scale * Z)
        order = np.argsort(vals)[:n_polish]
        best = float(vals[order[0]])
        cfg = TrustRegionConfig.for_manifold(S, grad_tol=1e-10, max_outer=200)
        for i in order:
            res = trust_region_minimize(
                lambda z: float(base(base.scale * z)),
                lambda z: S.proj(z, base.scale * base.grad(base.scale * z)),
                S, Z[i], cfg)
            best = min(best, res.fun)
        return float(best)
    lo, hi = eig_bounds if eig_bounds is not None else (1e-3, 5.0)
    base = BenchmarkFn(base_kind, la.sym_dim(d))
    a, b = np.log(lo), np.log(hi)
    iu = np.triu_indices(d, 1)

    def build(p):
        A = np.zeros((d, d))
        A[iu] = p[: len(iu[0])]
        Q = la.expm_sym(np.zeros((d, d))) if d == 1 else expm(A - A.T)
        w = p[len(iu[0]):]
        return (Q * w) @ Q.T

    def fun(p):
        return float(base(base.scale * la.vec_sym(build(p))))

    n_ang = len(iu[0])
    P = np.hstack([rng.uniform(-np.pi, np.pi, (n_random, n_ang)), rng.uniform(a, b, (n_random, d))])
    vals = np.array([fun(p) for p in P])
    order = np.argsort(vals)[:n_polish]
    best = float(vals[order[0]])
    bounds = [(None, None)] * n_ang + [(a, b)] * d
    for i in order:
        res = minimize(fun, P[i], method="L-BFGS-B", bounds=bounds, options=dict(ftol=1e-15, gtol=1e-10))
        best = min(best, float(res.fun))
    return float(best)


# ---------------------------------------------------------------- embedded objectives


@dataclass
class EmbeddedObjective:
    """``f(x) = base(coord(m(x)))`` for a planted nested projection ``m``."""

    kind: str
    D: int
    d: int
    params: object
    base: BenchmarkFn
    f_star: float
    eig_bounds: Optional[tuple] = None
    n_evals: int = field(default=0, compare=False)

    def project(self, x):
        if self.kind == "sphere":
            T = composed_projection(self.params.axes)
            x = np.asarray(x, dtype=float)
            Z = sphere_project_batch(x, T)
            return Z[0] if x.ndim == 1 else Z
        return spd_project(x, self.params)

    def latent(self, z):
        return latent_value(z, self.kind, self.base)

    def __call__(self, x):
        self.n_evals += 1
        return float(self.latent(self.project(x)))


def make_embedded_objective(kind, D, d, base_kind, seed, eig_bounds=(1e-3, 5.0)):
    """Planted objective with mapping parameters drawn from ``seed``.

    Sphere: axes uniform on their spheres and radii uniform in
    ``(pi/4, pi/2]``. The radii do not change ``m(x)``, only the inverse
    map. SPD: ``W`` uniform on the Grassmannian.
    """
    if not 1 <= d < D:
        raise ValueError("need 1 <= d < D")
    rng = _as_rng(seed)
    if kind == "sphere":
        params = NestedSphereParams.random(D, d, rng)
        base = BenchmarkFn(base_kind, d + 1)
        fs = f_star("sphere", base_kind, d)
        return EmbeddedObjective("sphere", D, d, params, base, fs)
    if kind == "spd":
        W = Grassmann(D, d).random_point(rng)
        base = BenchmarkFn(base_kind, la.sym_dim(d))
        fs = f_star("spd", base_kind, d, tuple(eig_bounds))
        return EmbeddedObjective("spd", D, d, SpdNestedParams(W), base, fs, tuple(eig_bounds))
    raise ValueError(f"unknown manifold kind {kind!r}")


def simple_regret(ys, f_star_value):
    """Best-so-far minus the optimum, per iteration.

    Observations below ``f_star_value`` mean the oracle was not tight; a
    warning is issued and the regret is floored at zero.
    """
    best = np.minimum.accumulate(np.asarray(ys, dtype=float))
    reg = best - f_star_value
    if np.any(reg < -1e-9 * max(1.0, abs(f_star_value))):
        warnings.warn(f"observed value {best.min():.6g} below f_star {f_star_value:.6g}", RuntimeWarning)
    return np.maximum(reg, 0.0)
