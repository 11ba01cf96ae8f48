"""Validated manifold points and the functional manifold API.

The dataclasses check their invariants on construction; the functions accept
either these types or raw arrays.
"""

from dataclasses import dataclass

import numpy as np

from .manifolds import SPD, Grassmann, Manifold, Product, Sphere, _as_rng


@dataclass(frozen=True, eq=False)
class SpherePoint:
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        Sphere(max(c.size - 1, 1)).check_point(c)

    def __array__(self, dtype=None, copy=None):
        return self.coords if dtype is None else self.coords.astype(dtype)

    @property
    def manifold(self):
        return Sphere(self.coords.size - 1)


@dataclass(frozen=True, eq=False)
class SpdPoint:
    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)
        SPD(m.shape[0]).check_point(m)

    def __array__(self, dtype=None, copy=None):
        return self.mat if dtype is None else self.mat.astype(dtype)

    @property
    def manifold(self):
        return SPD(self.mat.shape[0])


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    frame: np.ndarray

    def __post_init__(self):
        f = np.array(self.frame, dtype=float)
        f.setflags(write=False)
        object.__setattr__(self, "frame", f)
        Grassmann(*f.shape).check_point(f)

    def __array__(self, dtype=None, copy=None):
        return self.frame if dtype is None else self.frame.astype(dtype)

    @property
    def manifold(self):
        return Grassmann(*self.frame.shape)


@dataclass(frozen=True, eq=False)
class ProductPoint:
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def manifold(self):
        return Product([p.manifold for p in self.parts])


@dataclass(frozen=True, eq=False)
class TangentVector:
    """A tangent vector together with its base point."""

    base: object
    dir: np.ndarray

    def __post_init__(self):
        d = np.array(self.dir, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "dir", d)
        x = np.asarray(self.base)
        if d.shape != x.shape:
            raise ValueError("tangent vector shape does not match its base point")
        man = _manifold_of(self.base)
        if np.linalg.norm(man.proj(x, d) - d) > 1e-10 * max(1.0, np.linalg.norm(d)):
            raise ValueError("vector does not lie in the tangent space of its base point")

    def __array__(self, dtype=None, copy=None):
        return self.dir if dtype is None else self.dir.astype(dtype)


def _manifold_of(x):
    if isinstance(x, (SpherePoint, SpdPoint, GrassmannPoint, ProductPoint)):
        return x.manifold
    x = np.asarray(x)
    if x.ndim == 1:
        return Sphere(x.size - 1)
    raise TypeError("cannot infer the manifold of a raw matrix; wrap it in SpdPoint or GrassmannPoint")


def _wrap(man, arr):
    if isinstance(man, Sphere):
        return SpherePoint(arr)
    if isinstance(man, SPD):
        return SpdPoint(arr)
    if isinstance(man, Grassmann):
        return GrassmannPoint(arr)
    return arr


def _base_array(x, u):
    if isinstance(u, TangentVector):
        if u.base is not x and not np.array_equal(np.asarray(u.base), np.asarray(x)):
            raise ValueError("tangent vector belongs to a different base point")
    return np.asarray(u, dtype=float)


def sphere_distance(x, y):
    return Sphere(max(np.size(x) - 1, 1)).dist(np.asarray(x, float), np.asarray(y, float))


def sphere_exp(x, u):
    x = np.asarray(x, float)
    return SpherePoint(Sphere(x.size - 1).exp(x, _base_array(x, u)))


def sphere_log(x, y):
    xa = np.asarray(x, float)
    return TangentVector(SpherePoint(xa), Sphere(xa.size - 1).log(xa, np.asarray(y, float)))


def spd_log_euclidean_distance(X, Y):
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if X.shape != Y.shape:
        raise ValueError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    return SPD(X.shape[0]).dist(X, Y)


def spd_exp(X, U):
    X = np.asarray(X, float)
    U = _base_array(X, U)
    if np.linalg.norm(U - U.T) > 1e-10 * max(1.0, np.linalg.norm(U)):
        raise ValueError("tangent matrix is not symmetric")
    return SpdPoint(SPD(X.shape[0]).exp(X, U))


def spd_log(X, Y):
    X = np.asarray(X, float)
    return TangentVector(SpdPoint(X), SPD(X.shape[0]).log(X, np.asarray(Y, float)))


def tangent_project(x, v):
    man = _manifold_of(x)
    return TangentVector(x, man.proj(np.asarray(x, float), np.asarray(v, float)))


def retract(x, u):
    man = _manifold_of(x)
    xa = np.asarray(x, float)
    return _wrap(man, man.retract(xa, _base_array(x, u)))


def inner(x, u1, u2):
    man = _manifold_of(x)
    xa = np.asarray(x, float)
    return man.inner(xa, _base_array(x, u1), _base_array(x, u2))


def random_point(manifold: Manifold, rng_seed=None):
    """Seeded random point; SPD with eigenvalue bounds samples eigenvalues uniformly."""
    return _wrap(manifold, manifold.random_point(_as_rng(rng_seed)))


def random_tangent(x, rng_seed=None):
    man = _manifold_of(x)
    return TangentVector(x, man.random_tangent(np.asarray(x, float), _as_rng(rng_seed)))


__all__ = [
    "SpherePoint", "SpdPoint", "GrassmannPoint", "ProductPoint", "TangentVector",
    "sphere_distance", "sphere_exp", "sphere_log", "spd_log_euclidean_distance",
    "spd_exp", "spd_log", "tangent_project", "retract", "inner", "random_point",
    "random_tangent",
]
