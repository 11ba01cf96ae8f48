import numpy as np
import pytest
from hypothesis import given, strategies as st

from geobo import linalg as la
from geobo.manifolds import SPD, Euclidean, Product, Sphere
from geobo.optim import (
    AugLagConfig,
    Constraint,
    ConstraintSet,
    InfeasibleError,
    NonFiniteObjectiveError,
    TrustRegionConfig,
    augmented_lagrangian_minimize,
    boundary_tau,
    clamp_step_to_constraints,
    fd_hessian_operator,
    negative_part_norm,
    tcg_solve,
    trust_region_minimize,
    write_trace,
)


def _dot(u, v):
    return float(np.dot(u, v))


def _sphere_problem(target):
    S = Sphere(2)
    return S, (lambda x: 0.5 * S.dist(x, target) ** 2), (lambda x: -S.log(x, target))


def _spd_problem(T):
    M = SPD(3)
    logT = la.logm_spd(T)

    def f(X):
        return float(np.sum((la.logm_spd(X) - logT) ** 2))

    def g(X):
        return M.egrad2rgrad(X, 2.0 * la.dlogm(X, la.logm_spd(X) - logT))

    return M, f, g


class TestTcg:
    def test_interior_solution(self):
        res = tcg_solve(np.array([1.0, 0.0]), lambda d: d, 10.0, _dot, max_iter=5)
        np.testing.assert_allclose(res.eta, [-1.0, 0.0])
        assert res.reason == "converged"

    def test_boundary_solution(self):
        res = tcg_solve(np.array([1.0, 0.0]), lambda d: d, 0.5, _dot, max_iter=5)
        np.testing.assert_allclose(res.eta, [-0.5, 0.0])
        assert res.reason == "trust-region boundary"

    def test_negative_curvature(self):
        H = np.diag([-1.0, 1.0])
        res = tcg_solve(np.array([1.0, 0.0]), lambda d: H @ d, 2.0, _dot, max_iter=5)
        np.testing.assert_allclose(res.eta, [-2.0, 0.0])
        assert res.reason == "negative curvature"

    def test_zero_gradient(self):
        res = tcg_solve(np.zeros(2), lambda d: d, 1.0, _dot, max_iter=5)
        assert res.n_iter == 0
        np.testing.assert_array_equal(res.eta, [0.0, 0.0])

    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 5.0))
    def test_norms_respect_radius(self, seed, radius):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((5, 5))
        H = A + A.T
        res = tcg_solve(rng.standard_normal(5), lambda d: H @ d, radius, _dot, max_iter=5)
        assert max(res.norms) <= radius * (1 + 1e-10)
        np.testing.assert_allclose(res.Heta, H @ res.eta, atol=1e-9)

    def test_constraint_clamp_stops(self):
        # linearized constraint 0.5 + eta_1 >= 0
        cons = (np.array([0.5]), [np.array([1.0, 0.0])], ["ineq"], 0.0)
        res = tcg_solve(np.array([1.0, 0.0]), lambda d: d, 10.0, _dot, max_iter=5, constraints=cons)
        np.testing.assert_allclose(res.eta, [-0.5, 0.0])
        assert res.reason == "constraint"


class TestBoundaryTau:
    def test_examples(self):
        assert boundary_tau(np.zeros(2), np.array([1.0, 0.0]), 2.0, _dot) == pytest.approx(2.0)
        assert boundary_tau(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 2.0, _dot) == pytest.approx(1.0)
        assert boundary_tau(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 2.0, _dot) == pytest.approx(3.0)

    def test_zero_direction(self):
        with pytest.raises(ValueError):
            boundary_tau(np.zeros(2), np.zeros(2), 1.0, _dot)

    @given(st.integers(0, 2**31 - 1))
    def test_lands_on_boundary(self, seed):
        rng = np.random.default_rng(seed)
        nu = rng.standard_normal(3)
        nu *= rng.uniform(0.0, 0.99) / np.linalg.norm(nu)  # the iterate lies inside the region
        d = rng.standard_normal(3)
        tau = boundary_tau(nu, d, 1.0, _dot)
        assert tau >= 0
        assert np.linalg.norm(nu + tau * d) == pytest.approx(1.0, rel=1e-10)


class TestConstraints:
    def test_clamp_example(self):
        nu, done = clamp_step_to_constraints(np.zeros(2), np.array([1.0, 0.0]), 1.0, [0.5],
                                             [np.array([-1.0, 0.0])], _dot)
        np.testing.assert_allclose(nu, [0.5, 0.0])
        assert done

    def test_clamp_untouched(self):
        nu, done = clamp_step_to_constraints(np.zeros(2), np.array([1.0, 0.0]), 1.0, [0.5],
                                             [np.array([1.0, 0.0])], _dot)
        np.testing.assert_allclose(nu, [1.0, 0.0])
        assert not done

    def test_negative_part(self):
        assert negative_part_norm([-3.0, 4.0], ["ineq", "ineq"]) == 3.0
        assert negative_part_norm([-3.0, 4.0], ["ineq", "eq"]) == 5.0

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            Constraint(lambda x: 0.0, lambda x: 0.0, kind="lt")


class TestHessian:
    def test_fd_on_quadratic(self):
        E = Euclidean(2)
        x = np.array([0.3, -0.2])

        def grad(z):
            return np.array([z[0], 2.0 * z[1]])

        H = fd_hessian_operator(E, grad, x, grad(x))
        np.testing.assert_allclose(H(np.array([1.0, 0.0])), [1.0, 0.0], atol=1e-8)
        np.testing.assert_allclose(H(np.array([0.0, 1.0])), [0.0, 2.0], atol=1e-8)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            fd_hessian_operator(Euclidean(2), lambda z: z, np.zeros(2), np.zeros(2), step=0.0)


class TestTrustRegion:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrustRegionConfig(delta_max=1.0, delta_0=2.0)
        with pytest.raises(ValueError):
            TrustRegionConfig(rho_accept=0.3)

    def test_sphere_geodesic_distance(self, rng):
        t = np.array([0.0, 0.0, 1.0])
        S, f, g = _sphere_problem(t)
        for _ in range(20):
            x0 = S.random_point(rng)
            if S.dist(x0, t) > 0.9 * np.pi:
                x0 = -x0
            res = trust_region_minimize(f, g, S, x0, TrustRegionConfig(max_outer=50, grad_tol=1e-9))
            assert S.dist(res.x, t) < 1e-5
            assert res.n_iter <= 50
            accepted = [r["f"] for r in res.trace if r["accepted"]]
            assert all(b < a for a, b in zip([f(x0)] + accepted, accepted))
            for norms, row in zip(res.tcg_norms, res.trace):
                assert max(norms) <= row["radius"] * 4 * (1 + 1e-10)

    def test_spd_log_euclidean(self, rng):
        T = SPD(3).random_point(rng)
        M, f, g = _spd_problem(T)
        for _ in range(5):
            res = trust_region_minimize(f, g, M, M.random_point(rng), TrustRegionConfig(max_outer=50, grad_tol=1e-9))
            assert M.dist(res.x, T) < 1e-5

    def test_already_optimal(self):
        t = np.array([0.0, 1.0, 0.0])
        S, f, g = _sphere_problem(t)
        res = trust_region_minimize(f, g, S, t)
        assert res.converged and res.n_iter == 0

    def test_nan_objective(self):
        E = Euclidean(1)
        with pytest.raises(NonFiniteObjectiveError):
            trust_region_minimize(lambda x: np.nan, lambda x: np.ones(1), E, np.zeros(1))

    def test_trace_file(self, tmp_path):
        t = np.array([0.0, 0.0, 1.0])
        S, f, g = _sphere_problem(t)
        res = trust_region_minimize(f, g, S, np.array([1.0, 0.0, 0.0]))
        path = tmp_path / "tr.csv"
        write_trace(res.trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "k,f,grad_norm,radius,rho,accepted"
        assert len(lines) == len(res.trace) + 1


class TestAugLag:
    def test_scalar_inequality(self):
        E = Euclidean(1)
        cons = ConstraintSet([Constraint(lambda x: 1.0 - x[0], lambda x: np.array([-1.0]))])
        res = augmented_lagrangian_minimize(lambda x: (x[0] - 2.0) ** 2, lambda x: 2.0 * (x - 2.0), cons, E,
                                            np.array([0.0]), tr_cfg=TrustRegionConfig(delta_max=10.0))
        assert res.x[0] == pytest.approx(1.0, abs=1e-6)
        assert res.multipliers[0] == pytest.approx(2.0, abs=1e-4)

    def test_sphere_equality(self, rng):
        S = Sphere(2)
        e1, e3 = np.eye(3)[0], np.eye(3)[2]
        cons = ConstraintSet([Constraint(lambda x: x[0], lambda x: S.proj(x, e1), "eq")])
        x0 = np.array([0.6, 0.64, 0.48])
        res = augmented_lagrangian_minimize(lambda x: -x[2], lambda x: S.proj(x, -e3), cons, S, x0)
        np.testing.assert_allclose(res.x, [0.0, 0.0, 1.0], atol=1e-6)

    def test_product_manifold_with_active_constraint(self):
        # numpy-scalar multipliers times product tangents must stay product tangents
        P = Product([Euclidean(1), Euclidean(2)])
        cons = ConstraintSet([Constraint(lambda x: 1.0 - x[0][0], lambda x: P.proj(x, (np.array([-1.0]), np.zeros(2))))])
        res = augmented_lagrangian_minimize(
            lambda x: float((x[0][0] - 2.0) ** 2 + np.sum(x[1] ** 2)),
            lambda x: P.proj(x, (2.0 * (x[0] - 2.0), 2.0 * x[1])),
            cons, P, (np.array([0.0]), np.ones(2)), tr_cfg=TrustRegionConfig(delta_max=10.0))
        assert res.x[0][0] == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(res.x[1], 0.0, atol=1e-6)

    def test_infeasible(self):
        E = Euclidean(1)
        cons = ConstraintSet([Constraint(lambda x: -1.0 - x[0] ** 2, lambda x: -2.0 * x, "ineq")])
        with pytest.raises(InfeasibleError):
            augmented_lagrangian_minimize(lambda x: float(x[0] ** 2), lambda x: 2.0 * x, cons, E,
                                          np.array([0.5]), AugLagConfig(max_outer=5))
