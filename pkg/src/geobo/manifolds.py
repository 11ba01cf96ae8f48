"""Riemannian manifolds used by the optimizers and the GP surrogates.

Points and tangent vectors are plain numpy arrays here (product manifolds use
tuples). The validated point types of :mod:`geobo.points` wrap these classes.

Conventions
-----------
* ``Sphere(n)`` is the unit sphere S^n embedded in R^(n+1).
* ``SPD(n)`` carries two metrics: the Log-Euclidean distance ``dist`` used by
  kernels, and the affine-invariant metric used by ``inner``/``exp``/``log``
  for optimization (``dist_ai`` is the matching geodesic distance).
* ``Grassmann(D, d)`` stores a subspace as a ``D x d`` orthonormal frame and
  uses the canonical Frobenius metric.
"""

import numpy as np

from . import linalg as la


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class Manifold:
    """Common interface. Subclasses implement the array-level operations."""

    name = "manifold"
    #: default maximal trust radius for the trust-region solver
    delta_max = 1.0

    @property
    def dim(self):
        raise NotImplementedError

    def inner(self, x, u, v):
        raise NotImplementedError

    def norm(self, x, u):
        return float(np.sqrt(max(self.inner(x, u, u), 0.0)))

    def proj(self, x, v):
        raise NotImplementedError

    def egrad2rgrad(self, x, g):
        return self.proj(x, g)

    def transp(self, x, y, u):
        """Vector transport by re-projection onto the tangent space at ``y``."""
        return self.proj(y, u)

    def zero_vector(self, x):
        return np.zeros_like(x)

    def exp(self, x, u):
        raise NotImplementedError

    def retract(self, x, u):
        return self.exp(x, u)

    def log(self, x, y):
        raise NotImplementedError

    def dist(self, x, y):
        raise NotImplementedError

    def random_point(self, rng=None):
        raise NotImplementedError

    def random_tangent(self, x, rng=None):
        rng = _as_rng(rng)
        u = self.proj(x, rng.standard_normal(np.shape(x)))
        return u / self.norm(x, u)

    def check_point(self, x):
        raise NotImplementedError


class Euclidean(Manifold):
    name = "euclidean"
    delta_max = 10.0

    def __init__(self, *shape):
        self.shape = tuple(shape)

    @property
    def dim(self):
        return int(np.prod(self.shape))

    def inner(self, x, u, v):
        return float(np.vdot(u, v))

    def proj(self, x, v):
        return np.asarray(v, dtype=float)

    def exp(self, x, u):
        return x + u

    def log(self, x, y):
        return y - x

    def dist(self, x, y):
        return float(np.linalg.norm(np.asarray(y) - np.asarray(x)))

    def random_point(self, rng=None):
        return _as_rng(rng).standard_normal(self.shape)

    def check_point(self, x):
        if np.shape(x) != self.shape:
            raise ValueError(f"expected shape {self.shape}, got {np.shape(x)}")


class Sphere(Manifold):
    """Unit sphere S^n in R^(n+1)."""

    name = "sphere"
    delta_max = np.pi / 2

    def __init__(self, n):
        if n < 1:
            raise ValueError("sphere dimension must be >= 1")
        self.n = n

    @property
    def dim(self):
        return self.n

    @property
    def ambient_dim(self):
        return self.n + 1

    def inner(self, x, u, v):
        return float(np.dot(u, v))

    def proj(self, x, v):
        return v - np.dot(x, v) * x

    def exp(self, x, u):
        t = np.linalg.norm(u)
        if t < 1e-300:
            return np.array(x, dtype=float)
        y = np.cos(t) * x + np.sin(t) * (u / t)
        return y / np.linalg.norm(y)

    def retract(self, x, u):
        y = x + u
        return y / np.linalg.norm(y)

    def log(self, x, y):
        c = float(np.dot(x, y))
        v = y - c * x
        nv = np.linalg.norm(v)
        if nv < 1e-15:
            if c > 0:
                return np.zeros_like(x)
            raise ValueError("logarithmic map undefined for antipodal points")
        return np.arctan2(nv, c) * (v / nv)

    def dist(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
        return float(2.0 * np.arctan2(np.linalg.norm(x - y), np.linalg.norm(x + y)))

    def pairwise_dist(self, X, Y=None):
        Y = X if Y is None else Y
        # chord-based angle stays accurate for nearly coincident points
        diff = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
        summ = np.linalg.norm(X[:, None, :] + Y[None, :, :], axis=-1)
        return 2.0 * np.arctan2(diff, summ)

    def random_point(self, rng=None):
        x = _as_rng(rng).standard_normal(self.n + 1)
        return x / np.linalg.norm(x)

    def random_points(self, k, rng=None):
        X = _as_rng(rng).standard_normal((k, self.n + 1))
        return X / np.linalg.norm(X, axis=1, keepdims=True)

    def check_point(self, x, tol=1e-10):
        x = np.asarray(x)
        if x.shape != (self.n + 1,):
            raise ValueError(f"expected a vector of length {self.n + 1}, got {x.shape}")
        if abs(np.linalg.norm(x) - 1.0) > tol:
            raise ValueError("point is not unit norm")


class SPD(Manifold):
    """Symmetric positive-definite ``n x n`` matrices.

    Parameters
    ----------
    n : int
        Matrix size.
    eig_bounds : tuple of float, optional
        ``(lo, hi)`` eigenvalue box used by :meth:`random_point`.
    """

    name = "spd"
    delta_max = 1.0

    def __init__(self, n, eig_bounds=None):
        self.n = n
        if eig_bounds is not None:
            lo, hi = eig_bounds
            if not 0 < lo < hi:
                raise ValueError("eigenvalue bounds must satisfy 0 < lo < hi")
            eig_bounds = (float(lo), float(hi))
        self.eig_bounds = eig_bounds

    @property
    def dim(self):
        return la.sym_dim(self.n)

    def inner(self, X, U, V):
        Xinv = la.inv_spd(X)
        return float(np.sum((Xinv @ U) * (Xinv @ V).T))

    def proj(self, X, V):
        return la.sym(V)

    def egrad2rgrad(self, X, G):
        return la.sym(X @ la.sym(G) @ X)

    def exp(self, X, U):
        s = la.sqrtm_spd(X)
        si = la.invsqrtm_spd(X)
        return la.sym(s @ la.expm_sym(si @ U @ si) @ s)

    def retract(self, X, U):
        return la.sym(X + U + 0.5 * U @ np.linalg.solve(X, U))

    def log(self, X, Y):
        s = la.sqrtm_spd(X)
        si = la.invsqrtm_spd(X)
        return la.sym(s @ la.logm_spd(si @ Y @ si) @ s)

    def dist(self, X, Y):
        """Log-Euclidean distance."""
        return float(np.linalg.norm(la.logm_spd(X) - la.logm_spd(Y)))

    def dist_ai(self, X, Y):
        si = la.invsqrtm_spd(X)
        w = np.linalg.eigvalsh(la.sym(si @ Y @ si))
        return float(np.sqrt(np.sum(np.log(np.maximum(w, la.EIG_FLOOR)) ** 2)))

    def random_point(self, rng=None):
        rng = _as_rng(rng)
        if self.eig_bounds is None:
            A = rng.standard_normal((self.n, self.n))
            return la.expm_sym(la.sym(A) / np.sqrt(self.n))
        lo, hi = self.eig_bounds
        w = rng.uniform(lo, hi, self.n)
        Q = random_orthogonal(self.n, rng)
        return la.sym((Q * w) @ Q.T)

    def random_tangent(self, X, rng=None):
        rng = _as_rng(rng)
        U = la.sym(rng.standard_normal((self.n, self.n)))
        return U / self.norm(X, U)

    def check_point(self, X, tol=1e-10):
        X = np.asarray(X)
        if X.shape != (self.n, self.n):
            raise ValueError(f"expected a {self.n}x{self.n} matrix, got {X.shape}")
        scale = max(np.linalg.norm(X), 1.0)
        if np.linalg.norm(X - X.T) > tol * scale:
            raise ValueError("matrix is not symmetric")
        if np.linalg.eigvalsh(la.sym(X)).min() <= 0:
            raise ValueError("matrix is not positive definite")


def random_orthogonal(n, rng=None):
    """Haar-distributed orthogonal matrix."""
    rng = _as_rng(rng)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def orthonormalize(A):
    """Thin QR factor with a positive-diagonal convention."""
    Q, R = np.linalg.qr(A)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


class Grassmann(Manifold):
    """d-dimensional subspaces of R^D represented by orthonormal frames."""

    name = "grassmann"
    delta_max = np.pi / 2

    def __init__(self, D, d):
        if not 1 <= d <= D:
            raise ValueError("Grassmann requires 1 <= d <= D")
        self.D = D
        self.d = d

    @property
    def dim(self):
        return self.d * (self.D - self.d)

    def inner(self, W, U, V):
        return float(np.sum(U * V))

    def proj(self, W, V):
        return V - W @ (W.T @ V)

    def retract(self, W, U):
        return orthonormalize(W + U)

    def exp(self, W, U):
        P, s, Qt = np.linalg.svd(U, full_matrices=False)
        Y = (W @ Qt.T) * np.cos(s) @ Qt + (P * np.sin(s)) @ Qt
        return orthonormalize(Y)

    def log(self, W, Y):
        WtY = W.T @ Y
        A = np.linalg.solve(WtY.T, (Y - W @ WtY).T).T
        P, s, Qt = np.linalg.svd(A, full_matrices=False)
        return (P * np.arctan(s)) @ Qt

    def dist(self, W, Y):
        s = np.linalg.svd(W.T @ Y, compute_uv=False)
        return float(np.linalg.norm(np.arccos(np.clip(s, -1.0, 1.0))))

    def random_point(self, rng=None):
        return orthonormalize(_as_rng(rng).standard_normal((self.D, self.d)))

    def check_point(self, W, tol=1e-10):
        W = np.asarray(W)
        if W.shape != (self.D, self.d):
            raise ValueError(f"expected a {self.D}x{self.d} frame, got {W.shape}")
        if np.linalg.norm(W.T @ W - np.eye(self.d)) > tol:
            raise ValueError("frame columns are not orthonormal")


class ProductVector(tuple):
    """Tangent vector of a product manifold with vector-space arithmetic."""

    # numpy scalars must defer to the methods below instead of building arrays
    __array_ufunc__ = None

    def __add__(self, other):
        return ProductVector(a + b for a, b in zip(self, other))

    def __sub__(self, other):
        return ProductVector(a - b for a, b in zip(self, other))

    def __mul__(self, c):
        return ProductVector(a * c for a in self)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return ProductVector(a / c for a in self)

    def __neg__(self):
        return ProductVector(-a for a in self)


class Product(Manifold):
    """Cartesian product; points are tuples, tangents are :class:`ProductVector`."""

    name = "product"

    def __init__(self, parts):
        self.parts = tuple(parts)
        self.delta_max = float(min(p.delta_max for p in self.parts))

    @property
    def dim(self):
        return sum(p.dim for p in self.parts)

    def inner(self, x, u, v):
        return sum(p.inner(a, b, c) for p, a, b, c in zip(self.parts, x, u, v))

    def _map(self, fn, *args):
        return ProductVector(fn(p, *a) for p, *a in zip(self.parts, *args))

    def proj(self, x, v):
        return self._map(lambda p, a, b: p.proj(a, b), x, v)

    def egrad2rgrad(self, x, g):
        return self._map(lambda p, a, b: p.egrad2rgrad(a, b), x, g)

    def transp(self, x, y, u):
        return self._map(lambda p, a, b, c: p.transp(a, b, c), x, y, u)

    def zero_vector(self, x):
        return self._map(lambda p, a: p.zero_vector(a), x)

    def exp(self, x, u):
        return tuple(p.exp(a, b) for p, a, b in zip(self.parts, x, u))

    def retract(self, x, u):
        return tuple(p.retract(a, b) for p, a, b in zip(self.parts, x, u))

    def log(self, x, y):
        return self._map(lambda p, a, b: p.log(a, b), x, y)

    def dist(self, x, y):
        return float(np.sqrt(sum(p.dist(a, b) ** 2 for p, a, b in zip(self.parts, x, y))))

    def random_point(self, rng=None):
        rng = _as_rng(rng)
        return tuple(p.random_point(rng) for p in self.parts)

    def random_tangent(self, x, rng=None):
        rng = _as_rng(rng)
        u = self._map(lambda p, a: p.random_tangent(a, rng), x)
        return u / self.norm(x, u)

    def check_point(self, x):
        if len(x) != len(self.parts):
            raise ValueError("wrong number of components")
        for p, a in zip(self.parts, x):
            p.check_point(a)
