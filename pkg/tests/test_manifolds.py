import numpy as np
import pytest
from hypothesis import given, strategies as st

from geobo import linalg as la
from geobo.manifolds import SPD, Euclidean, Grassmann, Product, ProductVector, Sphere
from geobo.points import (
    GrassmannPoint,
    SpdPoint,
    SpherePoint,
    TangentVector,
    inner,
    random_point,
    random_tangent,
    retract,
    spd_exp,
    spd_log,
    spd_log_euclidean_distance,
    sphere_distance,
    sphere_exp,
    sphere_log,
    tangent_project,
)

seeds = st.integers(0, 2**31 - 1)


class TestSphereExamples:
    def test_distances(self):
        assert sphere_distance([1, 0, 0], [0, 1, 0]) == pytest.approx(np.pi / 2)
        assert sphere_distance([1, 0, 0], [1, 0, 0]) == 0.0
        assert sphere_distance([1, 0, 0], [-1, 0, 0]) == pytest.approx(np.pi)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sphere_distance([1, 0, 0], [0, 1])

    def test_exp_examples(self):
        np.testing.assert_allclose(np.asarray(sphere_exp([1.0, 0.0], [0.0, 0.0])), [1, 0])
        np.testing.assert_allclose(np.asarray(sphere_exp([1.0, 0.0], [0.0, np.pi / 2])), [0, 1], atol=1e-15)

    def test_antipodal_log_errors(self):
        with pytest.raises(ValueError):
            sphere_log([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0])

    def test_tangent_project_example(self):
        out = tangent_project(SpherePoint([1.0, 0.0]), [3.0, 2.0])
        np.testing.assert_allclose(np.asarray(out), [0.0, 2.0])

    def test_retract_example(self):
        out = retract(SpherePoint([1.0, 0.0]), [0.0, 1.0])
        np.testing.assert_allclose(np.asarray(out), [2 ** -0.5, 2 ** -0.5])

    @given(seeds)
    def test_log_norm_is_distance(self, seed):
        rng = np.random.default_rng(seed)
        S = Sphere(4)
        x, y = S.random_point(rng), S.random_point(rng)
        u = np.asarray(sphere_log(x, y))
        assert np.linalg.norm(u) == pytest.approx(sphere_distance(x, y), abs=1e-10)
        np.testing.assert_allclose(np.asarray(sphere_exp(x, u)), y, atol=1e-10)


class TestSpdExamples:
    def test_log_euclidean_examples(self):
        I2 = np.eye(2)
        assert spd_log_euclidean_distance(I2, I2) == 0.0
        assert spd_log_euclidean_distance(np.diag([np.e, 1.0]), I2) == pytest.approx(1.0)
        assert spd_log_euclidean_distance(np.e ** 2 * I2, I2) == pytest.approx(2 * np.sqrt(2))

    def test_non_pd_input(self):
        with pytest.raises(ValueError):
            spd_log_euclidean_distance(np.diag([1.0, -1.0]), np.eye(2))

    def test_exp_examples(self):
        np.testing.assert_allclose(np.asarray(spd_exp(np.eye(2), np.zeros((2, 2)))), np.eye(2))
        np.testing.assert_allclose(np.asarray(spd_exp(np.eye(2), np.diag([1.0, 0.0]))), np.diag([np.e, 1.0]))

    def test_exp_rejects_nonsymmetric(self):
        with pytest.raises(ValueError):
            spd_exp(np.eye(2), np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_tangent_project_symmetrizes(self):
        V = np.array([[1.0, 2.0], [0.0, 3.0]])
        out = tangent_project(SpdPoint(np.eye(2)), V)
        np.testing.assert_allclose(np.asarray(out), 0.5 * (V + V.T))

    @given(seeds)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        M = SPD(3)
        X, Y = M.random_point(rng), M.random_point(rng)
        U = spd_log(X, Y)
        np.testing.assert_allclose(np.asarray(spd_exp(X, np.asarray(U))), Y, atol=1e-8)

    def test_affine_invariant_inner(self, rng):
        M = SPD(3)
        X = M.random_point(rng)
        U, V = M.random_tangent(X, rng), M.random_tangent(X, rng)
        Xi = np.linalg.inv(X)
        assert M.inner(X, U, V) == pytest.approx(np.trace(Xi @ U @ Xi @ V), rel=1e-12)
        # the norm of log_X(Y) is the affine-invariant distance
        Y = M.random_point(rng)
        assert M.norm(X, M.log(X, Y)) == pytest.approx(M.dist_ai(X, Y), rel=1e-10)

    def test_bounded_sampling(self, rng):
        M = SPD(5, (0.001, 5.0))
        for _ in range(50):
            w = np.linalg.eigvalsh(np.asarray(random_point(M, rng)))
            assert w.min() >= 0.001 and w.max() <= 5.0


class TestGrassmann:
    @given(seeds)
    def test_projection_is_horizontal(self, seed):
        rng = np.random.default_rng(seed)
        G = Grassmann(6, 2)
        W = G.random_point(rng)
        P = np.asarray(tangent_project(GrassmannPoint(W), rng.standard_normal((6, 2))))
        np.testing.assert_allclose(W.T @ P, 0.0, atol=1e-12)

    def test_retract_orthonormal(self, rng):
        G = Grassmann(7, 3)
        W = G.random_point(rng)
        U = G.proj(W, rng.standard_normal((7, 3)))
        G.check_point(np.asarray(retract(GrassmannPoint(W), U)))

    def test_exp_log(self, rng):
        G = Grassmann(8, 3)
        for _ in range(20):
            W = G.random_point(rng)
            U = G.random_tangent(W, rng) * rng.uniform(0.1, 1.2)
            np.testing.assert_allclose(G.log(W, G.exp(W, U)), U, atol=1e-8)
            assert G.dist(W, G.exp(W, U)) == pytest.approx(G.norm(W, U), abs=1e-8)


class TestGeneric:
    @pytest.mark.parametrize("man", [Sphere(3), SPD(3), Grassmann(5, 2), Euclidean(4)])
    def test_projection_idempotent_self_adjoint(self, man, rng):
        x = man.random_point(rng)
        shape = np.shape(x)
        v, w = rng.standard_normal(shape), rng.standard_normal(shape)
        p = man.proj(x, v)
        np.testing.assert_allclose(man.proj(x, p), p, atol=1e-12)
        pv, pw = man.proj(x, v), man.proj(x, w)
        # self-adjoint w.r.t. the Frobenius pairing used for ambient vectors
        assert np.sum(pv * w) == pytest.approx(np.sum(v * pw), abs=1e-10)

    @pytest.mark.parametrize("man", [Sphere(3), SPD(3), Grassmann(5, 2)])
    def test_retraction_second_order_error(self, man, rng):
        x = man.random_point(rng)
        u = man.random_tangent(x, rng)
        ts = np.array([1e-1, 1e-2, 1e-3])
        errs = [np.linalg.norm(man.retract(x, t * u) - man.exp(x, t * u)) for t in ts]
        slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
        assert slope > 1.8

    @pytest.mark.parametrize("man", [Sphere(4), SPD(3)])
    def test_triangle_inequality(self, man, rng):
        for _ in range(200):
            a, b, c = (man.random_point(rng) for _ in range(3))
            assert man.dist(a, c) <= man.dist(a, b) + man.dist(b, c) + 1e-9

    def test_inner_product_properties(self, rng):
        x = SpherePoint(Sphere(3).random_point(rng))
        u, v = np.asarray(random_tangent(x, 1)), np.asarray(random_tangent(x, 2))
        assert inner(x, u, u) >= 0
        assert inner(x, u, np.zeros(4)) == 0
        assert abs(inner(x, u, v)) <= np.sqrt(inner(x, u, u) * inner(x, v, v)) + 1e-15

    def test_seeded_sampling_is_deterministic(self):
        for man in (Sphere(3), SPD(3, (0.001, 5)), Grassmann(5, 2)):
            np.testing.assert_array_equal(np.asarray(random_point(man, 7)), np.asarray(random_point(man, 7)))

    def test_product_arithmetic(self, rng):
        P = Product([Sphere(2), Euclidean(3)])
        x = P.random_point(rng)
        u = P.random_tangent(x, rng)
        assert isinstance(u * 2.0, ProductVector)
        y = P.exp(x, u)
        np.testing.assert_allclose(P.log(x, y)[1], u[1], atol=1e-12)
        assert P.dist(x, y) == pytest.approx(P.norm(x, u), abs=1e-9)


class TestInvariants:
    def test_constructors_validate(self):
        with pytest.raises(ValueError):
            SpherePoint([1.0, 1.0])
        with pytest.raises(ValueError):
            SpdPoint(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            SpdPoint(np.diag([1.0, 0.0]))
        with pytest.raises(ValueError):
            GrassmannPoint(np.ones((3, 2)))

    def test_tangent_must_be_tangent(self):
        with pytest.raises(ValueError):
            TangentVector(SpherePoint([1.0, 0.0]), [1.0, 0.0])

    def test_points_are_immutable(self):
        p = SpherePoint([1.0, 0.0])
        with pytest.raises(ValueError):
            p.coords[0] = 2.0

    def test_mixing_base_points_errors(self):
        u = sphere_log([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        with pytest.raises(ValueError):
            sphere_exp([0.0, 0.0, 1.0], u)

    def test_log_euclidean_matches_vec_features(self, rng):
        M = SPD(3)
        X, Y = M.random_point(rng), M.random_point(rng)
        fx, fy = la.vec_sym(la.logm_spd(X)), la.vec_sym(la.logm_spd(Y))
        assert M.dist(X, Y) == pytest.approx(np.linalg.norm(fx - fy), rel=1e-12)
