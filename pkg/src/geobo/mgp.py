"""Manifold GP surrogate ``f = g o m`` with a learned nested projection.

The projection parameters are optimized jointly with the GP hyperparameters
by the Riemannian trust-region solver on ``Grassmann x R^3``:

* sphere: latent distances depend on the axes only through the row space of
  the composed projection (see :mod:`geobo.nested`), so a frame ``U`` of
  ``G(D+1, d+1)`` parameterizes them exactly. The fitted frame is converted
  back to axes afterwards.
* SPD: ``W`` lives on ``G(D, d)`` and the marginal likelihood uses the fast
  features ``vec_sym(W^T log(X_i) W)``. The returned GP is conditioned on the
  exact latent points ``W^T X_i W``.
"""

import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import linalg as la
from .gp import FactorizationError, GpState, HyperTransform, fit_gp, gp_nll, standardize
from .kernels import GeodesicSEKernel, spd_features, spd_latent_features_fast
from .manifolds import Euclidean, Grassmann, Product, ProductVector, _as_rng
from .nested import (
    NestedSphereParams,
    SpdNestedParams,
    SingularProjectionError,
    axes_from_frame,
    composed_projection,
    sphere_project_batch,
    spd_project,
)
from .optim import NonFiniteObjectiveError, TrustRegionConfig, trust_region_minimize


@dataclass
class MgpModel:
    """Fitted surrogate.

    ``mapping_params`` is a :class:`NestedSphereParams` (axes; radii are
    placeholders) or a :class:`SpdNestedParams`. ``gp.inputs`` are the latent
    training inputs in kernel layout.
    """

    kind: str
    mapping_params: object
    gp: GpState
    frame: Optional[np.ndarray] = None
    nll: float = np.nan
    trace: List[dict] = field(default_factory=list)

    @property
    def latent_dim(self):
        if self.mapping_params is None:
            return None
        return self.mapping_params.d

    def project(self, X):
        """``m(x)`` for a single point or a stack."""
        if self.mapping_params is None:
            return np.asarray(X, dtype=float)
        if self.kind == "sphere":
            T = composed_projection(self.mapping_params.axes)
            single = np.asarray(X).ndim == 1
            Z = sphere_project_batch(X, T)
            return Z[0] if single else Z
        return spd_project(X, self.mapping_params)

    def latent_inputs(self, Z):
        """Kernel-layout rows for latent points."""
        if self.kind == "sphere":
            return np.atleast_2d(Z)
        Z = np.asarray(Z, dtype=float)
        return np.atleast_2d(spd_features(Z))

    def predict(self, X):
        """Posterior of ``f`` at original-space points: the GP at ``m(x)``."""
        return self.gp.posterior(self.latent_inputs(self.project(X)))


def _sphere_objective(X, ys, tf, man):
    def fg(p):
        U, raw = p
        lp, jac = tf.forward(raw)
        Y = X @ U
        n = np.linalg.norm(Y, axis=1, keepdims=True)
        if np.any(n < 1e-9):
            return np.inf, man.zero_vector(p)
        Z = Y / n
        try:
            val, g, gz = gp_nll(lp, Z, ys, "sphere", with_input_grad=True)
        except np.linalg.LinAlgError:
            return np.inf, man.zero_vector(p)
        # through the normalization z = y / ||y||
        gy = (gz - np.sum(gz * Z, axis=1, keepdims=True) * Z) / n
        gU = X.T @ gy
        return val, ProductVector((man.parts[0].proj(U, gU), g * jac))
    return fg


def _spd_objective(logX, ys, tf, man):
    def fg(p):
        W, raw = p
        lp, jac = tf.forward(raw)
        F = spd_latent_features_fast(logX, W)
        try:
            val, g, gF = gp_nll(lp, F, ys, "euclid", with_input_grad=True)
        except np.linalg.LinAlgError:
            return np.inf, man.zero_vector(p)
        G = la.unvec_sym(gF, W.shape[1])
        gW = 2.0 * np.sum(logX @ W @ G, axis=0)
        return val, ProductVector((man.parts[0].proj(W, gW), g * jac))
    return fg


def _minimize_with_recovery(fg, man, p0, f0, cfg, max_restarts=3):
    """Trust-region run that resumes from the last good iterate after a failure.

    Trial points where the Gram factorization breaks down (small ``beta`` on
    many points) make the objective infinite; the run is restarted from the
    last accepted iterate with a smaller initial radius.
    """
    x, fun, iters, accepted = p0, f0, 0, []
    for attempt in range(max_restarts + 1):
        try:
            res = trust_region_minimize(None, None, man, x, cfg, fun_and_grad=fg)
        except NonFiniteObjectiveError as exc:
            accepted += [t["f"] for t in exc.trace if t["accepted"]]
            iters += len(exc.trace)
            if exc.x is not None and exc.fun < fun:
                x, fun = exc.x, exc.fun
            if iters >= cfg.max_outer:
                break
            cfg = replace(cfg, delta_0=cfg.delta_0 / 4, max_outer=cfg.max_outer - len(exc.trace))
            continue
        accepted += [t["f"] for t in res.trace if t["accepted"]]
        return res.fun, res.x, iters + res.n_iter, accepted
    return fun, x, iters, accepted


def gradient_frame(X, y, k):
    """Top-``k`` directions of the averaged outer product of estimated gradients.

    Gradients come from the posterior mean of an ambient SE-kernel GP and are
    projected onto the sphere's tangent spaces. Used as an informed start for
    the sphere projection frame.
    """
    gp = fit_gp(X, y, "euclid", 0.0)
    _, _, dm, _ = gp.posterior(X, return_grad=True)
    G = dm - np.sum(dm * X, axis=1, keepdims=True) * X
    _, V = np.linalg.eigh(G.T @ G)
    return V[:, ::-1][:, :k]


def mgp_fit(X, y, kind, d, beta_min=0.0, rng=None, n_starts=5, init: Optional[MgpModel] = None,
            tr_cfg: Optional[TrustRegionConfig] = None, hyper_inits=None, extra_frames=()):
    """Fit projection and GP hyperparameters by marginal likelihood.

    Parameters
    ----------
    X : ndarray
        Training inputs on ``S^D`` (rows) or ``S++^D`` (stack).
    kind : {"sphere", "spd"}
    d : int
        Latent dimension. ``d == D`` skips the projection and fits a plain GP.
    beta_min : float
        Floor of the latent kernel's ``beta``.
    init : MgpModel, optional
        Warm start; it is always one of the starts.
    n_starts : int
        Random frames tried in addition to the warm start.
    extra_frames : sequence of ndarray
        Further starting frames (orthonormal columns), e.g. from
        :func:`gradient_frame`.
    """
    rng = _as_rng(rng)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least two observations")
    D = X.shape[1] - 1 if kind == "sphere" else X.shape[1]
    if d == D:
        inputs = X if kind == "sphere" else spd_features(X)
        mode = "sphere" if kind == "sphere" else "euclid"
        gp = fit_gp(inputs, y, mode, beta_min, inits=hyper_inits)
        return MgpModel(kind, None, gp, None, gp.nll())
    if not 1 <= d < D:
        raise ValueError("latent dimension must satisfy 1 <= d < D")

    shift, scale = standardize(y)
    ys = (y - shift) / scale
    tf = HyperTransform(beta_min)
    if kind == "sphere":
        grass = Grassmann(D + 1, d + 1)
        man = Product([grass, Euclidean(3)])
        fg = _sphere_objective(X, ys, tf, man)
    else:
        grass = Grassmann(D, d)
        man = Product([grass, Euclidean(3)])
        logX = la.logm_spd(X)
        fg = _spd_objective(logX, ys, tf, man)
    cfg = tr_cfg or TrustRegionConfig(delta_max=np.pi / 2, max_outer=60, grad_tol=1e-5, max_inner=20)

    starts = []
    if init is not None and init.frame is not None:
        raw0 = tf.inverse(init.gp.kernel.theta, init.gp.kernel.beta, init.gp.noise_var)
        starts.append((init.frame, raw0))
    for F in extra_frames:
        starts.append((np.linalg.qr(F)[0], tf.inverse(1.0, beta_min + 1.0 if kind == "sphere" else 0.5, 1e-2)))
    hyper = hyper_inits or [(1.0, beta_min + 1.0 if kind == "sphere" else 0.5, 1e-2)]
    for i in range(n_starts):
        th, be, no = hyper[i % len(hyper)]
        starts.append((grass.random_point(rng), tf.inverse(th, be, no)))

    best = None
    trace = []
    for s_idx, p0 in enumerate(starts):
        f0, _ = fg(p0)
        if not np.isfinite(f0):
            continue
        fun, x, iters, accepted = _minimize_with_recovery(fg, man, p0, f0, cfg)
        trace.append(dict(start=s_idx, f0=f0, f=fun, iters=iters, accepted=accepted))
        if best is None or fun < best[0]:
            best = (fun, x)
    if best is None:
        warnings.warn("all mGP starts failed; using the first start", RuntimeWarning)
        best = (np.inf, starts[0])
    U, raw = best[1]
    lp, _ = tf.forward(raw)
    theta, beta, noise = np.exp(lp)
    hyper_best = [(theta, max(beta, beta_min), noise)]

    if kind == "sphere":
        ref = init.mapping_params.axes if init is not None and init.mapping_params is not None else None
        axes = axes_from_frame(U, ref_axes=ref)
        params = NestedSphereParams(axes, (np.pi / 2,) * len(axes))
        T = composed_projection(axes)
        Z = sphere_project_batch(X, T)
        kern = GeodesicSEKernel(theta, max(beta, beta_min), beta_min)
        gp = GpState(Z, y, kern, float(noise), "sphere", shift, scale)
        frame = T.T
    else:
        params = SpdNestedParams(U)
        Z = spd_project(X, params)
        # exact latent Log-Euclidean inputs; only hyperparameters are refreshed
        gp = fit_gp(spd_features(Z), y, "euclid", beta_min, inits=hyper_best)
        frame = U
    return MgpModel(kind, params, gp, frame, float(best[0]), trace)
