"""Bayesian-optimization loops: GaBO, HD-GaBO, random search and a Euclidean GP.

All loops minimize. Every run draws its initial design from ``init_seed`` (so
methods can share it) and everything else from ``rng_seed``.
"""

import time
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from . import linalg as la
from .gp import GpState, fit_gp
from .kernels import estimate_beta_min, spd_features
from .manifolds import SPD, Sphere, _as_rng
from .mgp import MgpModel, gradient_frame, mgp_fit
from .nested import (
    NestedSphereParams,
    SingularProjectionError,
    SpdNestedParams,
    SpdReconstructionParams,
    fit_reconstruction_sphere,
    fit_reconstruction_spd,
    spd_unproject,
    spectral_norm,
    sphere_project,
    sphere_unproject,
)
from .optim import Constraint, ConstraintSet, NonFiniteObjectiveError, TrustRegionConfig, trust_region_minimize

METHODS = ("hd_gabo", "gabo", "random", "euclidean_gp")
DUPLICATE_TOL = 1e-8
EIG_TIE_TOL = 1e-8


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class SearchSpace:
    """``S^D`` or ``S++^D`` with optional eigenvalue bounds for SPD."""

    kind: str
    D: int
    eig_bounds: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("sphere", "spd"):
            raise ValueError("search space kind must be 'sphere' or 'spd'")
        if self.eig_bounds is not None:
            lo, hi = self.eig_bounds
            if not 0 < lo < hi:
                raise ValueError("eigenvalue bounds must satisfy 0 < lo < hi")
            object.__setattr__(self, "eig_bounds", (float(lo), float(hi)))

    @property
    def manifold(self):
        if self.kind == "sphere":
            return Sphere(self.D)
        return SPD(self.D, self.eig_bounds)

    def latent(self, d):
        return SearchSpace(self.kind, d, self.eig_bounds)

    def random_point(self, rng):
        return self.manifold.random_point(rng)

    def contains(self, x, tol=1e-8):
        x = np.asarray(x, dtype=float)
        if self.kind == "sphere":
            return x.shape == (self.D + 1,) and abs(np.linalg.norm(x) - 1.0) <= tol
        if x.shape != (self.D, self.D) or np.linalg.norm(x - x.T) > tol * max(1.0, np.linalg.norm(x)):
            return False
        w = np.linalg.eigvalsh(la.sym(x))
        if self.eig_bounds is None:
            return w[0] > 0
        lo, hi = self.eig_bounds
        return w[0] >= lo - tol and w[-1] <= hi + tol


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float

    def __post_init__(self):
        if not np.isfinite(self.y):
            raise ValueError("observations must be finite")


@dataclass
class BoConfig:
    method: str = "gabo"
    n_init: int = 5
    n_iter: int = 100
    latent_dim: Optional[int] = None
    acq_restarts: int = 5
    refit_every: int = 1
    rng_seed: int = 0
    init_seed: Optional[int] = None
    n_candidates: int = 1000
    mgp_starts: int = 5
    mgp_warm_starts: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.n_iter < 0 or self.refit_every < 1 or self.acq_restarts < 0:
            raise ValueError("invalid loop settings")


@dataclass
class BoResult:
    history: List[Observation]
    recommendation: Observation
    trace: List[dict] = field(default_factory=list)
    elapsed_ms: List[float] = field(default_factory=list)


class BoAborted(RuntimeError):
    """The objective raised; ``history`` holds the observations made so far."""

    def __init__(self, message, history, elapsed_ms=None):
        super().__init__(message)
        self.history = history
        self.elapsed_ms = elapsed_ms or []


def recommend(history):
    """Best observed point; ties resolve to the earliest."""
    ys = np.array([o.y for o in history])
    return history[int(np.argmin(ys))]


# ---------------------------------------------------------------- acquisition


def expected_improvement(mean, variance, best_y, return_grad=False):
    """EI for minimization.

    With ``return_grad`` also returns ``dEI/dmean`` and ``dEI/dvariance``.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.maximum(np.asarray(variance, dtype=float), 0.0)
    sigma = np.sqrt(var)
    small = sigma < 1e-9
    safe = np.where(small, 1.0, sigma)
    gamma = (best_y - mean) / safe
    cdf = norm.cdf(gamma)
    pdf = norm.pdf(gamma)
    ei = np.where(small, np.maximum(best_y - mean, 0.0), sigma * (gamma * cdf + pdf))
    ei = np.maximum(ei, 0.0)
    if not return_grad:
        return ei
    d_mean = np.where(small, -(best_y - mean > 0).astype(float), -cdf)
    d_var = np.where(small, 0.0, pdf / (2.0 * safe))
    return ei, d_mean, d_var


def eig_bound_constraints(lo, hi, xi=0.0):
    """``lambda_min(X) - lo >= 0`` and ``hi - lambda_max(X) >= 0`` on SPD.

    Gradients use the average eigenprojector over eigenvalues tied within
    ``1e-8`` and are returned in the affine-invariant metric.
    """

    def _proj(X, which):
        w, U = np.linalg.eigh(la.sym(X))
        ref = w[0] if which == "min" else w[-1]
        tied = np.abs(w - ref) <= EIG_TIE_TOL * max(1.0, abs(ref))
        Ut = U[:, tied]
        return ref, (Ut @ Ut.T) / Ut.shape[1]

    def c_lo(X):
        return float(np.linalg.eigvalsh(la.sym(X))[0] - lo)

    def g_lo(X):
        _, P = _proj(X, "min")
        return la.sym(X @ P @ X)

    def c_hi(X):
        return float(hi - np.linalg.eigvalsh(la.sym(X))[-1])

    def g_hi(X):
        _, P = _proj(X, "max")
        return -la.sym(X @ P @ X)

    return ConstraintSet([Constraint(c_lo, g_lo, "ineq"), Constraint(c_hi, g_hi, "ineq")], xi)


class _Acquisition:
    """EI of a GP over a latent manifold, with Euclidean gradients per point."""

    def __init__(self, gp: GpState, kind, best_y):
        self.gp = gp
        self.kind = kind
        self.best_y = best_y
        self.scale = gp.y_scale

    def _inputs(self, P):
        if self.kind == "sphere":
            return np.atleast_2d(P)
        return np.atleast_2d(spd_features(P))

    def values(self, P):
        m, v = self.gp.posterior(self._inputs(P))
        return expected_improvement(m, v, self.best_y) / self.scale

    def value_grad(self, p):
        inp = self._inputs(p)
        m, v, dm, dv = self.gp.posterior(inp, return_grad=True)
        ei, em, ev = expected_improvement(m, v, self.best_y, return_grad=True)
        g = (em[0] * dm[0] + ev[0] * dv[0]) / self.scale
        if self.kind == "spd":
            n = p.shape[-1]
            g = la.dlogm(p, la.unvec_sym(g, n))
        return float(ei[0]) / self.scale, g


def optimize_acquisition(acq: _Acquisition, space: SearchSpace, rng, restarts=5, extra_starts=(),
                         n_candidates=1000, tr_cfg: Optional[TrustRegionConfig] = None):
    """Maximize EI over ``space`` with Riemannian trust-region restarts.

    Candidates are sampled uniformly (within the eigenvalue bounds for SPD);
    the best ``restarts`` of them plus ``extra_starts`` seed the local
    solver. Returns ``(point, ei, info)`` where ``point`` is the best of all
    starts and results.
    """
    man = space.manifold
    cands = np.array([man.random_point(rng) for _ in range(n_candidates)]) if space.kind == "spd" \
        else man.random_points(n_candidates, rng)
    vals = acq.values(cands)
    order = np.argsort(-vals, kind="stable")[:restarts]
    starts = [cands[i] for i in order] + [np.asarray(s, dtype=float) for s in extra_starts]
    start_vals = list(vals[order]) + [float(acq.values(s)[0]) for s in extra_starts]
    constraints = None
    if space.kind == "spd" and space.eig_bounds is not None:
        constraints = eig_bound_constraints(*space.eig_bounds)
    cfg = tr_cfg or TrustRegionConfig.for_manifold(man, max_outer=30, grad_tol=1e-8)

    def fg(p):
        v, g = acq.value_grad(p)
        return -v, man.egrad2rgrad(p, -g)

    best_i = int(np.argmax(start_vals))
    best_p, best_v = starts[best_i], start_vals[best_i]
    failures = 0
    for s in starts:
        if constraints is not None and constraints.violation(s) > 0:
            continue
        try:
            res = trust_region_minimize(None, None, man, s, cfg, constraints=constraints, fun_and_grad=fg)
        except (NonFiniteObjectiveError, np.linalg.LinAlgError, la.NotPositiveDefiniteError):
            failures += 1
            continue
        p = res.x
        if space.kind == "sphere":
            p = p / np.linalg.norm(p)
        else:
            p = la.sym(p)
            if constraints is not None and constraints.violation(p) > 0:
                continue
        v = -res.fun
        if v > best_v:
            best_p, best_v = p, v
    if starts and failures == len(starts):
        warnings.warn("all acquisition restarts failed; returning the best initial sample", RuntimeWarning)
    return best_p, best_v, dict(failures=failures)


# ---------------------------------------------------------------- loop scaffolding


@lru_cache(maxsize=None)
def latent_beta_min(kind, dim):
    if kind == "spd":
        return 0.0
    return estimate_beta_min(Sphere(dim), n_samples=50, rng_seed=0)


def _init_design(space, cfg):
    rng = _as_rng(cfg.init_seed if cfg.init_seed is not None else cfg.rng_seed)
    return [space.random_point(rng) for _ in range(cfg.n_init)]


def _is_duplicate(x, X):
    if not len(X):
        return False
    diffs = np.asarray(X) - x[None]
    return float(np.min(np.sqrt(np.sum(diffs.reshape(len(X), -1) ** 2, axis=1)))) < DUPLICATE_TOL


def _run_loop(objective: Callable, space: SearchSpace, cfg: BoConfig, propose):
    """Shared loop: initial design, then ``n_iter`` proposals from ``propose``."""
    rng = _as_rng(cfg.rng_seed)
    history: List[Observation] = []
    elapsed: List[float] = []
    trace: List[dict] = []

    def evaluate(x):
        try:
            y = float(objective(x))
        except Exception as exc:  # the objective is a black box
            raise BoAborted(f"objective failed: {exc}", history, elapsed) from exc
        if not np.isfinite(y):
            raise BoAborted(f"objective returned {y}", history, elapsed)
        history.append(Observation(np.array(x, dtype=float), y))

    for x in _init_design(space, cfg):
        t0 = time.perf_counter()
        evaluate(x)
        elapsed.append(1e3 * (time.perf_counter() - t0))
    state = {}
    for it in range(cfg.n_iter):
        t0 = time.perf_counter()
        X = np.array([o.x for o in history])
        y = np.array([o.y for o in history])
        info = dict(iteration=cfg.n_init + it)
        x_new = propose(X, y, it, rng, state, info)
        if not space.contains(x_new):
            raise AssertionError("proposal left the search space")
        if _is_duplicate(x_new, X):
            info["event"] = "duplicate replaced"
            x_new = space.random_point(rng)
        evaluate(x_new)
        elapsed.append(1e3 * (time.perf_counter() - t0))
        trace.append(info)
    return BoResult(history, recommend(history), trace, elapsed)


# ---------------------------------------------------------------- methods


def run_random_search(objective, space: SearchSpace, cfg: BoConfig):
    def propose(X, y, it, rng, state, info):
        return space.random_point(rng)
    return _run_loop(objective, space, cfg, propose)


def _full_space_gp(X, y, space, beta_min, prev: Optional[GpState], refit):
    if space.kind == "sphere":
        inputs, mode = X, "sphere"
    else:
        inputs, mode = spd_features(X), "euclid"
    if prev is not None and not refit:
        k = prev.kernel
        shift, scale = float(np.mean(y)), float(np.std(y)) or 1.0
        return GpState(inputs, y, k, prev.noise_var, mode, shift, scale)
    inits = None
    if prev is not None:
        inits = [(prev.kernel.theta, prev.kernel.beta, prev.noise_var)]
        inits += [(1.0, max(beta_min, 1e-3) * 1.5 + (1.0 if mode == "sphere" else 0.0), 1e-2)]
    return fit_gp(inputs, y, mode, beta_min, inits=inits)


def _gabo_proposer(space: SearchSpace, cfg: BoConfig):
    beta_min = latent_beta_min(space.kind, space.D)

    def propose(X, y, it, rng, state, info):
        refit = it % cfg.refit_every == 0
        gp = _full_space_gp(X, y, space, beta_min, state.get("gp"), refit)
        state["gp"] = gp
        acq = _Acquisition(gp, space.kind, float(np.min(y)))
        inc = X[int(np.argmin(y))]
        x_new, ei, _ = optimize_acquisition(acq, space, rng, cfg.acq_restarts, [inc], cfg.n_candidates)
        info["ei"] = ei
        return x_new
    return propose


def run_gabo(objective, space: SearchSpace, cfg: BoConfig):
    """Geometry-aware BO on the full manifold."""
    return _run_loop(objective, space, cfg, _gabo_proposer(space, cfg))


def _feasible_spd_reconstruction(Z, W, rec: SpdReconstructionParams, bounds):
    """Clamp ``B`` into the eigenvalue box and shrink ``K`` until ``m^dagger(Z)`` is inside it.

    With ``K = 0`` the spectrum of the reconstruction is that of ``Z`` and
    ``B``, so a feasible shrink factor always exists.
    """
    if bounds is None:
        return rec
    lo, hi = bounds
    w, Q = np.linalg.eigh(rec.B)
    B = la.sym((Q * np.clip(w, lo, hi)) @ Q.T)
    pm = SpdNestedParams(W)

    def ok(t):
        X = spd_unproject(Z, pm, SpdReconstructionParams(rec.V, t * rec.K, B))
        e = np.linalg.eigvalsh(X)
        return e[0] >= lo and e[-1] <= hi

    if ok(1.0):
        return SpdReconstructionParams(rec.V, rec.K, B)
    a, b = 0.0, 1.0
    for _ in range(40):
        m = 0.5 * (a + b)
        if ok(m):
            a = m
        else:
            b = m
    return SpdReconstructionParams(rec.V, a * rec.K, B)


def _hd_proposer(space: SearchSpace, cfg: BoConfig):
    d = cfg.latent_dim
    lat = space.latent(d)
    beta_min = latent_beta_min(space.kind, d)

    def propose(X, y, it, rng, state, info):
        prev = state.get("model")
        refit = prev is None or it % cfg.refit_every == 0
        # (1) surrogate: projection and GP hyperparameters
        if refit:
            extra = [gradient_frame(X, y, d + 1)] if space.kind == "sphere" and len(y) >= 10 else []
            model = mgp_fit(X, y, space.kind, d, beta_min, rng,
                            n_starts=cfg.mgp_starts if prev is None else cfg.mgp_warm_starts,
                            init=prev, extra_frames=extra)
        else:
            model = _recondition(prev, X, y)
        state["model"] = model
        info["nll"] = model.nll
        # (2) latent training data
        Z = model.project(X)
        # (3) acquisition on the latent manifold
        acq = _Acquisition(model.gp, space.kind, float(np.min(y)))
        z_inc = Z[int(np.argmin(y))]
        z_new, ei, _ = optimize_acquisition(acq, lat, rng, cfg.acq_restarts, [z_inc], cfg.n_candidates)
        info["ei"] = ei
        # (4) reconstruction parameters, (5) back to the original manifold
        if space.kind == "sphere":
            fit = fit_reconstruction_sphere(X, Z, model.mapping_params.axes, init=state.get("radii"))
            state["radii"] = fit.radii
            params = NestedSphereParams(model.mapping_params.axes, fit.radii)
            info["recon"] = fit.objective
            x_new = _sphere_back(z_new, params, rng, info)
            if x_new is None:
                return space.random_point(rng)
            return x_new
        W = model.frame
        fit = fit_reconstruction_spd(X, Z, W, init=state.get("rec"))
        state["rec"] = fit.params
        info["recon"] = fit.objective
        rec = _feasible_spd_reconstruction(z_new, W, fit.params, space.eig_bounds)
        info["k_norm"] = spectral_norm(rec.K)
        return spd_unproject(z_new, SpdNestedParams(W), rec)

    return propose


def _sphere_back(z_new, params, rng, info):
    """``m^dagger(z)``, retrying once with a tiny perturbation on singularities."""
    for attempt in range(2):
        try:
            x = sphere_unproject(z_new, params)
            sphere_project(x, params)
            return x / np.linalg.norm(x)
        except SingularProjectionError:
            u = Sphere(z_new.size - 1).random_tangent(z_new, rng)
            z_new = Sphere(z_new.size - 1).exp(z_new, 1e-6 * u)
    info["event"] = "singular projection; random point"
    return None


def _recondition(model: MgpModel, X, y):
    Z = model.project(X)
    shift, scale = float(np.mean(y)), float(np.std(y)) or 1.0
    gp = GpState(model.latent_inputs(Z), y, model.gp.kernel, model.gp.noise_var, model.gp.mode, shift, scale)
    return MgpModel(model.kind, model.mapping_params, gp, model.frame, model.nll, [])


def run_hd_gabo(objective, space: SearchSpace, cfg: BoConfig):
    """HD-GaBO: latent surrogate and acquisition, reconstruction to ``M^D``.

    ``latent_dim == D`` degenerates to :func:`run_gabo`.
    """
    d = cfg.latent_dim
    if d is None:
        raise ValueError("hd_gabo needs latent_dim")
    if d == space.D:
        return run_gabo(objective, space, cfg)
    if not 1 <= d < space.D:
        raise ValueError("latent_dim must satisfy 1 <= d < D")
    return _run_loop(objective, space, cfg, _hd_proposer(space, cfg))


def _euclid_proposer(space: SearchSpace, cfg: BoConfig):
    def feats(X):
        return X if space.kind == "sphere" else la.vec_sym(X)

    def propose(X, y, it, rng, state, info):
        prev = state.get("gp")
        F = feats(X)
        if prev is not None and it % cfg.refit_every != 0:
            gp = GpState(F, y, prev.kernel, prev.noise_var, "euclid", float(np.mean(y)), float(np.std(y)) or 1.0)
        else:
            inits = None if prev is None else [(prev.kernel.theta, prev.kernel.beta, prev.noise_var), (1.0, 1.0, 1e-2)]
            gp = fit_gp(F, y, "euclid", 0.0, inits=inits)
        state["gp"] = gp
        best = float(np.min(y))
        scale = gp.y_scale

        def neg_ei(f):
            m, v, dm, dv = gp.posterior(f[None], return_grad=True)
            ei, em, ev = expected_improvement(m, v, best, return_grad=True)
            return -float(ei[0]) / scale, -(em[0] * dm[0] + ev[0] * dv[0]) / scale

        man = space.manifold
        cands = [man.random_point(rng) for _ in range(cfg.n_candidates)]
        CF = feats(np.array(cands))
        m, v = gp.posterior(CF)
        vals = expected_improvement(m, v, best)
        order = np.argsort(-vals, kind="stable")[:cfg.acq_restarts]
        starts = [CF[i] for i in order] + [F[int(np.argmin(y))]]
        best_f, best_v = starts[0], -np.inf
        for s in starts:
            if space.kind == "sphere":
                res = minimize(neg_ei, s, jac=True, method="SLSQP",
                               constraints=[dict(type="eq", fun=lambda f: f @ f - 1.0, jac=lambda f: 2.0 * f)],
                               options=dict(maxiter=50))
                f = res.x / np.linalg.norm(res.x)
            else:
                lo, hi = space.eig_bounds or (1e-6, 1e6)
                n = space.D
                iu = np.triu_indices(n)
                diag = iu[0] == iu[1]
                bnds = [(lo, hi) if dg else (-hi * np.sqrt(2.0), hi * np.sqrt(2.0)) for dg in diag]
                res = minimize(neg_ei, s, jac=True, method="L-BFGS-B", bounds=bnds, options=dict(maxiter=50))
                w, Q = np.linalg.eigh(la.unvec_sym(res.x, n))
                f = la.vec_sym(la.sym((Q * np.clip(w, lo, hi)) @ Q.T))
            val = -neg_ei(f)[0]
            if val > best_v:
                best_f, best_v = f, val
        info["ei"] = best_v
        if space.kind == "sphere":
            return best_f
        return la.unvec_sym(best_f, space.D)

    return propose


def run_euclidean_gp(objective, space: SearchSpace, cfg: BoConfig):
    """SE-kernel GP on ambient coordinates; proposals are mapped back onto the space."""
    return _run_loop(objective, space, cfg, _euclid_proposer(space, cfg))


RUNNERS = {"hd_gabo": run_hd_gabo, "gabo": run_gabo, "random": run_random_search,
           "euclidean_gp": run_euclidean_gp}


def run_method(objective, space: SearchSpace, cfg: BoConfig) -> BoResult:
    return RUNNERS[cfg.method](objective, space, cfg)
