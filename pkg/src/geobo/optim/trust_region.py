"""Riemannian trust-region minimization with a truncated-CG inner solver.

The inner solver optionally keeps linearized constraints ``c_k + <grad c_k, eta>``
feasible by clamping the CG step, which guarantees feasibility of the
linearized model but not optimality on a constraint border.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

_EPS = np.finfo(float).eps


class NonFiniteObjectiveError(FloatingPointError):
    """The objective returned NaN or inf.

    ``trace`` holds the iterations so far; ``x`` and ``fun`` are the last
    accepted iterate and its value (None when the start itself failed).
    """

    def __init__(self, message, trace, x=None, fun=None):
        super().__init__(message)
        self.trace = trace
        self.x = x
        self.fun = fun


@dataclass(frozen=True)
class TrustRegionConfig:
    """Solver settings.

    ``delta_0`` defaults to ``delta_max / 8``. ``max_inner`` defaults to the
    manifold dimension.
    """

    delta_max: float = math.pi / 2
    delta_0: Optional[float] = None
    rho_accept: float = 0.1
    max_outer: int = 100
    grad_tol: float = 1e-6
    max_inner: Optional[int] = None
    fd_step: float = 2.0 ** -14
    min_radius: float = 1e-12
    tcg_theta: float = 0.5
    tcg_kappa: float = 0.1

    def __post_init__(self):
        if self.delta_0 is None:
            object.__setattr__(self, "delta_0", self.delta_max / 8)
        if not 0 < self.delta_0 < self.delta_max:
            raise ValueError("trust radii must satisfy 0 < delta_0 < delta_max")
        if not 0 <= self.rho_accept < 0.25:
            raise ValueError("acceptance threshold must lie in [0, 1/4)")
        if self.grad_tol < 0 or self.max_outer < 0:
            raise ValueError("grad_tol and max_outer must be nonnegative")

    @classmethod
    def for_manifold(cls, manifold, **overrides):
        return cls(delta_max=float(manifold.delta_max), **overrides)


@dataclass
class Constraint:
    """``fun(x) >= 0`` (inequality) or ``fun(x) == 0`` (equality).

    ``grad`` returns the Riemannian gradient of ``fun`` at ``x``.
    """

    fun: Callable
    grad: Callable
    kind: str = "ineq"

    def __post_init__(self):
        if self.kind not in ("ineq", "eq"):
            raise ValueError("constraint kind must be 'ineq' or 'eq'")


@dataclass
class ConstraintSet:
    constraints: List[Constraint]
    xi: float = 0.0

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("constraint tolerance must be nonnegative")

    @property
    def kinds(self):
        return [c.kind for c in self.constraints]

    def values(self, x):
        return np.array([c.fun(x) for c in self.constraints], dtype=float)

    def grads(self, x):
        return [c.grad(x) for c in self.constraints]

    def violation(self, x):
        return negative_part_norm(self.values(x), self.kinds)


def negative_part_norm(values, kinds):
    """Norm of ``(c)^-``: ``c`` for equalities, ``min(0, c)`` for inequalities."""
    v = np.asarray(values, dtype=float)
    neg = np.array([vi if k == "eq" else min(0.0, vi) for vi, k in zip(v, kinds)])
    return float(np.linalg.norm(neg))


def boundary_tau(nu, delta_dir, radius, inner):
    """Nonnegative root of ``<nu,nu> + 2 tau <nu,d> + tau^2 <d,d> = radius^2``."""
    a = inner(delta_dir, delta_dir)
    if a <= 0:
        raise ValueError("search direction must be nonzero")
    b = inner(nu, delta_dir)
    c = inner(nu, nu) - radius * radius
    disc = b * b - a * c
    if disc < 0:
        if disc < -1e-12 * max(b * b, a * radius * radius, 1e-300):
            raise ValueError("no real boundary crossing; is ||nu|| > radius?")
        disc = 0.0
    root = math.sqrt(disc)
    # c <= 0 whenever ||nu|| <= radius; pick the cancellation-free form
    if b >= 0:
        tau = -c / (b + root) if (b + root) > 0 else 0.0
    else:
        tau = (-b + root) / a
    return max(tau, 0.0)


def constraint_step_limit(nu, delta_dir, step, c_k, grad_c_k, inner, kinds=None, xi=0.0):
    """Largest ``tau`` in ``[0, step]`` keeping the linearized constraints feasible."""
    kinds = kinds or ["ineq"] * len(c_k)
    tau_c = step
    for cm, gm, kind in zip(c_k, grad_c_k, kinds):
        a = cm + inner(gm, nu)
        b = inner(gm, delta_dir)
        if kind == "ineq":
            if b < 0:
                tau_c = min(tau_c, max(a, 0.0) / (-b))
        elif b != 0:
            tau_c = min(tau_c, max((xi - a * np.sign(b)) / abs(b), 0.0))
    return max(tau_c, 0.0)


def clamp_step_to_constraints(nu, delta_dir, step, c_k, grad_c_k, inner, kinds=None, xi=0.0):
    """Shorten ``nu + step * delta_dir`` so the linearized constraints stay feasible.

    Returns ``(nu_next, terminated)``; ``terminated`` is True when the step had
    to be shortened (the caller then stops the CG iteration).
    """
    tau_c = constraint_step_limit(nu, delta_dir, step, c_k, grad_c_k, inner, kinds, xi)
    if tau_c < step:
        return nu + tau_c * delta_dir, True
    return nu + step * delta_dir, False


@dataclass
class TcgResult:
    eta: object
    Heta: object
    n_iter: int
    reason: str
    norms: List[float] = field(default_factory=list)


def tcg_solve(grad, hess, radius, inner, *, max_iter, theta=0.5, kappa=0.1, constraints=None):
    """Truncated conjugate gradient for ``min <g,eta> + 1/2 <H eta, eta>, ||eta|| <= radius``.

    Parameters
    ----------
    grad : tangent vector
        Riemannian gradient at the current iterate.
    hess : callable
        Linear operator on the tangent space.
    inner : callable
        Inner product of the tangent space, ``inner(u, v)``.
    constraints : tuple, optional
        ``(c_k, grad_c_k, kinds, xi)`` linearized at the current iterate.
    """
    nu = grad * 0.0
    Hnu = grad * 0.0
    r = grad
    rr = inner(r, r)
    r0 = math.sqrt(max(rr, 0.0))
    norms = [0.0]
    if r0 == 0.0:
        return TcgResult(nu, Hnu, 0, "zero gradient", norms)
    d = -r
    target = r0 * min(r0 ** theta, kappa)
    reason = "max iterations"
    j = 0

    def clamp(step):
        if constraints is not None:
            c_k, gc, kinds, xi = constraints
            tau_c = constraint_step_limit(nu, d, step, c_k, gc, inner, kinds, xi)
            if tau_c < step:
                return nu + tau_c * d, tau_c, True
        return nu + step * d, step, False

    for j in range(1, max_iter + 1):
        Hd = hess(d)
        dHd = inner(d, Hd)
        if dHd <= 0:
            tau = boundary_tau(nu, d, radius, inner)
            nu, step, stop = clamp(tau)
            Hnu = Hnu + step * Hd
            reason = "negative curvature" + (" (constrained)" if stop else "")
            norms.append(math.sqrt(inner(nu, nu)))
            break
        alpha = rr / dHd
        trial = nu + alpha * d
        if inner(trial, trial) >= radius * radius:
            tau = boundary_tau(nu, d, radius, inner)
            nu, step, stop = clamp(tau)
            Hnu = Hnu + step * Hd
            reason = "trust-region boundary" + (" (constrained)" if stop else "")
            norms.append(math.sqrt(inner(nu, nu)))
            break
        nu_next, step, stop = clamp(alpha)
        Hnu = Hnu + step * Hd
        nu = nu_next
        norms.append(math.sqrt(inner(nu, nu)))
        if stop:
            reason = "constraint"
            break
        r = r + alpha * Hd
        rr_next = inner(r, r)
        if math.sqrt(max(rr_next, 0.0)) <= target:
            reason = "converged"
            break
        d = -r + (rr_next / rr) * d
        rr = rr_next
    return TcgResult(nu, Hnu, j, reason, norms)


def fd_hessian_operator(manifold, grad_fn, x, grad_x, step=2.0 ** -14):
    """Finite-difference Hessian approximation along retraction probes."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")

    def hvp(eta):
        n = manifold.norm(x, eta)
        if n == 0.0:
            return eta * 0.0
        probe = manifold.retract(x, (step / n) * eta)
        g_probe = manifold.transp(probe, x, grad_fn(probe))
        return (g_probe - grad_x) * (n / step)

    return hvp


@dataclass
class TrResult:
    x: object
    fun: float
    grad_norm: float
    n_iter: int
    trace: List[dict]
    tcg_norms: List[List[float]]
    converged: bool


def trust_region_minimize(
    f,
    grad_fn,
    manifold,
    x0,
    cfg: Optional[TrustRegionConfig] = None,
    constraints: Optional[ConstraintSet] = None,
    hess: Optional[Callable] = None,
    fun_and_grad: Optional[Callable] = None,
):
    """Minimize ``f`` over ``manifold`` starting at ``x0``.

    ``grad_fn`` must return the Riemannian gradient. ``hess(x, g)`` may return
    an exact Hessian operator; otherwise finite differences are used. If
    ``fun_and_grad`` is given it is used wherever value and gradient are both
    needed.
    """
    cfg = cfg or TrustRegionConfig.for_manifold(manifold)
    max_inner = cfg.max_inner or max(manifold.dim, 1)

    def value_grad(x):
        if fun_and_grad is not None:
            return fun_and_grad(x)
        return f(x), grad_fn(x)

    def only_grad(x):
        if fun_and_grad is not None:
            return fun_and_grad(x)[1]
        return grad_fn(x)

    x = x0
    fx, g = value_grad(x)
    trace = []
    if not np.isfinite(fx):
        raise NonFiniteObjectiveError("objective is not finite at the initial point", trace)
    radius = cfg.delta_0
    tcg_norms = []
    converged = False
    k = 0
    for k in range(cfg.max_outer):
        gnorm = manifold.norm(x, g)
        if gnorm < cfg.grad_tol:
            converged = True
            break
        H = hess(x, g) if hess is not None else fd_hessian_operator(manifold, only_grad, x, g, cfg.fd_step)
        lin = None
        if constraints is not None:
            lin = (constraints.values(x), constraints.grads(x), constraints.kinds, constraints.xi)

        def inner(u, v, _x=x):
            return manifold.inner(_x, u, v)

        tcg = tcg_solve(g, H, radius, inner, max_iter=max_inner,
                        theta=cfg.tcg_theta, kappa=cfg.tcg_kappa, constraints=lin)
        tcg_norms.append(tcg.norms)
        eta = tcg.eta
        eta_norm = manifold.norm(x, eta)
        if eta_norm == 0.0:
            trace.append(dict(k=k, f=fx, grad_norm=gnorm, radius=radius, rho=float("nan"),
                              accepted=False))
            converged = tcg.reason.endswith("(constrained)") or tcg.reason == "constraint"
            break
        x_new = manifold.exp(x, eta)
        f_new = f(x_new) if fun_and_grad is None else None
        g_new = None
        if f_new is None:
            f_new, g_new = value_grad(x_new)
        if not np.isfinite(f_new):
            raise NonFiniteObjectiveError(f"objective returned {f_new} at iteration {k}", trace, x, fx)
        model_decrease = -manifold.inner(x, g, eta) - 0.5 * manifold.inner(x, tcg.Heta, eta)
        reg = max(1.0, abs(fx)) * 1e3 * _EPS
        if model_decrease <= 0:
            rho = -math.inf
        else:
            rho = (fx - f_new + reg) / (model_decrease + reg)
        if constraints is not None and constraints.violation(x_new) > constraints.xi:
            rho = -math.inf
        at_boundary = abs(eta_norm - radius) <= 1e-8 * radius
        if rho < 0.25:
            radius = 0.25 * radius
        elif rho > 0.75 and at_boundary:
            radius = min(2.0 * radius, cfg.delta_max)
        accepted = rho > cfg.rho_accept and f_new < fx
        if accepted:
            x, fx = x_new, f_new
            g = g_new if g_new is not None else only_grad(x)
        trace.append(dict(k=k, f=fx, grad_norm=gnorm, radius=radius, rho=rho, accepted=accepted))
        if radius < cfg.min_radius:
            break
    else:
        k = cfg.max_outer
    return TrResult(x=x, fun=fx, grad_norm=manifold.norm(x, g), n_iter=k, trace=trace,
                    tcg_norms=tcg_norms, converged=converged)


def write_trace(trace: Sequence[dict], path, delimiter=","):
    """Dump one record per outer iteration as delimited text."""
    cols = ["k", "f", "grad_norm", "radius", "rho", "accepted"]
    with open(path, "w") as fh:
        fh.write(delimiter.join(cols) + "\n")
        for row in trace:
            fh.write(delimiter.join(repr(row[c]) if c != "accepted" else str(int(row[c]))
                                    for c in cols) + "\n")
