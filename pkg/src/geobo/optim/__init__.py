"""Optimization on Riemannian manifolds."""

from .auglag import AugLagConfig, AugLagResult, InfeasibleError, augmented_lagrangian_minimize
from .trust_region import (
    Constraint,
    ConstraintSet,
    NonFiniteObjectiveError,
    TcgResult,
    TrResult,
    TrustRegionConfig,
    boundary_tau,
    clamp_step_to_constraints,
    fd_hessian_operator,
    negative_part_norm,
    tcg_solve,
    trust_region_minimize,
    write_trace,
)
