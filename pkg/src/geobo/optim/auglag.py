"""Augmented-Lagrangian outer loop over Riemannian trust-region inner solves."""

from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

from .trust_region import ConstraintSet, TrustRegionConfig, negative_part_norm, trust_region_minimize


class InfeasibleError(RuntimeError):
    def __init__(self, message, x=None, violation=None):
        super().__init__(message)
        self.x = x
        self.violation = violation


@dataclass(frozen=True)
class AugLagConfig:
    penalty_0: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e10
    max_outer: int = 30
    feas_tol: float = 1e-8
    infeasible_tol: float = 1e-4
    stall_ratio: float = 0.25
    inner_grad_tol_0: float = 1e-3
    inner_grad_tol: float = 1e-8
    mult_tol: float = 1e-8

    def __post_init__(self):
        if self.penalty_0 <= 0:
            raise ValueError("initial penalty must be positive")


@dataclass
class AugLagResult:
    x: object
    fun: float
    violation: float
    multipliers: np.ndarray
    penalty: float
    trace: List[dict] = field(default_factory=list)


def augmented_lagrangian_minimize(f, grad_fn, constraints: ConstraintSet, manifold, x0,
                                  cfg: AugLagConfig = None, tr_cfg: TrustRegionConfig = None,
                                  fun_and_grad=None):
    """Minimize ``f`` subject to ``constraints`` on ``manifold``.

    Inequalities use the shifted-penalty form
    ``(max(0, lam - rho c)^2 - lam^2) / (2 rho)``; equalities use
    ``-lam h + rho h^2 / 2``.
    """
    cfg = cfg or AugLagConfig()
    tr_cfg = tr_cfg or TrustRegionConfig.for_manifold(manifold)
    kinds = constraints.kinds
    lam = np.zeros(len(kinds))
    rho = cfg.penalty_0
    x = x0

    def base(x):
        if fun_and_grad is not None:
            return fun_and_grad(x)
        return f(x), grad_fn(x)

    def lagrangian(x, lam, rho):
        fx, g = base(x)
        c = constraints.values(x)
        gc = constraints.grads(x)
        val = fx
        for m, kind in enumerate(kinds):
            if kind == "ineq":
                s = max(0.0, lam[m] - rho * c[m])
                val += (s * s - lam[m] ** 2) / (2 * rho)
                if s > 0:
                    g = g - s * gc[m]
            else:
                val += -lam[m] * c[m] + 0.5 * rho * c[m] ** 2
                g = g + (rho * c[m] - lam[m]) * gc[m]
        return val, g

    viol = constraints.violation(x)
    trace = [dict(outer=0, f=base(x)[0], violation=viol, penalty=rho)]
    tol = cfg.inner_grad_tol_0
    for outer in range(1, cfg.max_outer + 1):
        res = trust_region_minimize(
            None, None, manifold, x,
            replace(tr_cfg, grad_tol=tol),
            fun_and_grad=lambda z, lam=lam.copy(), rho=rho: lagrangian(z, lam, rho),
        )
        x = res.x
        c = constraints.values(x)
        new_viol = negative_part_norm(c, kinds)
        lam_old = lam.copy()
        for m, kind in enumerate(kinds):
            if kind == "ineq":
                lam[m] = max(0.0, lam[m] - rho * c[m])
            else:
                lam[m] = lam[m] - rho * c[m]
        fx = base(x)[0]
        trace.append(dict(outer=outer, f=fx, violation=new_viol, penalty=rho))
        done = (new_viol <= cfg.feas_tol and tol <= cfg.inner_grad_tol
                and np.max(np.abs(lam - lam_old), initial=0.0) <= cfg.mult_tol * max(1.0, np.max(np.abs(lam), initial=0.0)))
        if done:
            viol = new_viol
            break
        if new_viol > cfg.stall_ratio * viol and new_viol > cfg.feas_tol:
            rho = min(rho * cfg.penalty_growth, cfg.penalty_max)
        viol = new_viol
        tol = max(tol * 0.1, cfg.inner_grad_tol)
    if viol > cfg.infeasible_tol:
        raise InfeasibleError(f"constraint violation {viol:.3e} after {cfg.max_outer} rounds", x, viol)
    return AugLagResult(x=x, fun=base(x)[0], violation=viol, multipliers=lam, penalty=rho, trace=trace)
