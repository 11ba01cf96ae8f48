"""End-to-end acceptance checks, one test per criterion.

Runtime budgets are stated for a 4-core machine; on fewer cores they are
scaled by ``4 / cores`` since the experiments parallelize over trials only.
"""

import os
import time

import numpy as np
import pytest

from geobo import linalg as la
from geobo.bo import BoConfig, SearchSpace, run_method
from geobo.benchmarks import make_embedded_objective
from geobo.gp import GpState, gp_nll
from geobo.harness import (
    config_from_mapping,
    default_jobs,
    final_regrets,
    paired_sign_test,
    read_records,
    run_experiment,
)
from geobo.kernels import GeodesicSEKernel, estimate_beta_min, gram, spd_features, spd_latent_gram_fast
from geobo.manifolds import SPD, Grassmann, Sphere
from geobo.nested import (
    NestedSphereParams,
    SpdNestedParams,
    SpdReconstructionParams,
    orthogonal_complement,
    spd_project,
    spd_unproject,
    sphere_project,
    sphere_unproject,
)
from geobo.optim import TrustRegionConfig, trust_region_minimize

CORES = os.cpu_count() or 1
BUDGET_SCALE = max(1.0, 4.0 / CORES)
MASTER_SEED = 2024


def _fmt_regret(v):
    return f"{v:.3g}"


# ---------------------------------------------------------------- 1-7: properties


def test_criterion_1_round_trips(acceptance):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_log, worst_dist = 0.0, 0.0
    S = Sphere(10)
    for _ in range(1000):
        x = S.random_point(rng)
        u = S.random_tangent(x, rng)
        u *= rng.uniform(0.0, 0.9 * np.pi) / np.linalg.norm(u)
        y = S.exp(x, u)
        worst_log = max(worst_log, np.linalg.norm(S.log(x, y) - u))
        worst_dist = max(worst_dist, abs(S.dist(x, y) - np.linalg.norm(u)))
    M = SPD(5)
    for _ in range(1000):
        X = M.random_point(rng)
        U = M.random_tangent(X, rng) * rng.uniform(0.0, 3.0)
        Y = M.exp(X, U)
        worst_log = max(worst_log, M.norm(X, M.log(X, Y) - U))
        worst_dist = max(worst_dist, abs(M.dist_ai(X, Y) - M.norm(X, U)))
    G = Grassmann(8, 3)
    for _ in range(1000):
        W = G.random_point(rng)
        U = G.random_tangent(W, rng)
        U *= rng.uniform(0.0, 1.2) / np.linalg.norm(U)
        Y = G.exp(W, U)
        worst_log = max(worst_log, np.linalg.norm(G.log(W, Y) - U))
        worst_dist = max(worst_dist, abs(G.dist(W, Y) - np.linalg.norm(U)))
    elapsed = time.perf_counter() - t0
    ok = worst_log <= 1e-8 and worst_dist <= 1e-8 and elapsed < 5.0
    acceptance(1, ok, f"max |log(exp u) - u| {worst_log:.1e}, max |d - |u|| {worst_dist:.1e}, {elapsed:.2f} s")


def test_criterion_2_nested_identities(acceptance):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    D, d = 10, 3
    worst_s = 0.0
    p = NestedSphereParams.random(D, d, rng)
    for z in Sphere(d).random_points(1000, rng):
        worst_s = max(worst_s, np.linalg.norm(sphere_project(sphere_unproject(z, p), p) - z))
    worst_p = 0.0
    for _ in range(1000):
        W = Grassmann(D, d).random_point(rng)
        K = rng.standard_normal((d, D - d))
        K *= rng.uniform(0.0, 0.99) / np.linalg.norm(K, 2)
        rec = SpdReconstructionParams(orthogonal_complement(W), K, SPD(D - d).random_point(rng))
        Z = SPD(d).random_point(rng)
        pm = SpdNestedParams(W)
        worst_p = max(worst_p, np.linalg.norm(spd_project(spd_unproject(Z, pm, rec), pm) - Z))
    elapsed = time.perf_counter() - t0
    ok = worst_s <= 1e-9 and worst_p <= 1e-9 and elapsed < 10.0
    acceptance(2, ok, f"sphere {worst_s:.1e}, SPD {worst_p:.1e}, {elapsed:.2f} s")


def test_criterion_3_radius_invariance(acceptance):
    rng = np.random.default_rng(3)
    p = NestedSphereParams.random(10, 3, rng)
    q = p.with_radii(NestedSphereParams.random(10, 3, rng).radii)
    S3 = Sphere(3)
    X = Sphere(10).random_points(200, rng)
    Za = np.array([sphere_project(x, p) for x in X])
    Zb = np.array([sphere_project(x, q) for x in X])
    pair_err = max(abs(S3.dist(Za[2 * i], Za[2 * i + 1]) - S3.dist(Zb[2 * i], Zb[2 * i + 1])) for i in range(100))
    k = GeodesicSEKernel(1.0, 2.0)
    gram_err = np.max(np.abs(gram(Za, k) - gram(Zb, k)))
    ok = pair_err <= 1e-9 and gram_err <= 1e-8
    acceptance(3, ok, f"distance diff {pair_err:.1e}, Gram diff {gram_err:.1e}")


def test_criterion_4_spd_fast_gram(acceptance):
    rng = np.random.default_rng(4)
    D, d = 5, 2
    W = Grassmann(D, d).random_point(rng)
    Q = np.hstack([W, orthogonal_complement(W)])
    Xs = []
    for _ in range(20):
        B = np.zeros((D, D))
        B[:d, :d] = SPD(d).random_point(rng)
        B[d:, d:] = SPD(D - d).random_point(rng)
        Xs.append(la.sym(Q @ B @ Q.T))
    Xs = np.array(Xs)
    k = GeodesicSEKernel(1.0, 0.5)
    fast = spd_latent_gram_fast(la.logm_spd(Xs), W, k)
    exact = gram(spd_features(W.T @ Xs @ W), k, mode="euclid")
    err = float(np.max(np.abs(fast - exact)))
    acceptance(4, err <= 1e-10, f"max Gram diff {err:.1e}")


def _naive_posterior(X, y, q, theta, beta, noise):
    def k(a, b):
        return theta * np.exp(-beta * Sphere(X.shape[1] - 1).dist(a, b) ** 2)
    K = np.array([[k(a, b) for b in X] for a in X]) + noise * np.eye(len(X))
    ks = np.array([k(q, b) for b in X])
    return ks @ np.linalg.solve(K, y), theta - ks @ np.linalg.solve(K, ks)


def test_criterion_5_gp_correctness(acceptance):
    rng = np.random.default_rng(5)
    worst_grad = 0.0
    for i in range(20):
        mode = ("sphere", "euclid")[i % 2]
        X = Sphere(2 + i % 4).random_points(int(rng.integers(5, 30)), rng)
        y = rng.standard_normal(len(X))
        lp = np.log([rng.uniform(0.2, 5.0), rng.uniform(1.5, 6.0), rng.uniform(1e-4, 0.2)])
        _, g = gp_nll(lp, X, y, mode)
        h = 1e-5
        fd = np.array([(gp_nll(lp + h * e, X, y, mode)[0] - gp_nll(lp - h * e, X, y, mode)[0]) / (2 * h)
                       for e in np.eye(3)])
        worst_grad = max(worst_grad, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6))))
    worst_post = 0.0
    for n in range(1, 21):
        X = Sphere(3).random_points(n, rng)
        y = rng.standard_normal(n)
        th, be, no = rng.uniform(0.5, 2.0), rng.uniform(1.0, 5.0), rng.uniform(1e-4, 1e-1)
        state = GpState(X, y, GeodesicSEKernel(th, be), no)
        for q in Sphere(3).random_points(5, rng):
            m, v = state.posterior(q)
            m0, v0 = _naive_posterior(X, y, q, th, be, no)
            worst_post = max(worst_post, abs(m[0] - m0), abs(v[0] - v0))
    ok = worst_grad < 1e-4 and worst_post <= 1e-9
    acceptance(5, ok, f"max gradient rel-err {worst_grad:.1e}, max posterior diff {worst_post:.1e}")


def test_criterion_6_gram_validity(acceptance):
    rng = np.random.default_rng(6)
    rates = []
    for n in (2, 3, 10):
        S = Sphere(n)
        beta = estimate_beta_min(S)
        passed = 0
        for _ in range(20):
            Z = S.random_points(50, rng)
            K = gram(Z, GeodesicSEKernel(1.0, beta), check=False)
            passed += np.linalg.eigvalsh(K)[0] >= -1e-8
        rates.append(passed / 20)
    ok = min(rates) >= 0.95
    acceptance(6, ok, "pass rates " + ", ".join(f"S^{n}: {r:.0%}" for n, r in zip((2, 3, 10), rates)))


def test_criterion_7_trust_region(acceptance):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    cfg = TrustRegionConfig(max_outer=50, grad_tol=1e-10)
    worst_err, max_iter, monotone, in_radius = 0.0, 0, True, True

    def audit(res, f0):
        nonlocal max_iter, monotone, in_radius
        max_iter = max(max_iter, res.n_iter)
        acc = [f0] + [r["f"] for r in res.trace if r["accepted"]]
        monotone &= all(b < a for a, b in zip(acc, acc[1:]))
        # each tCG solve runs against the radius in force before its step
        radius = cfg.delta_0
        for norms, row in zip(res.tcg_norms, res.trace):
            in_radius &= max(norms, default=0.0) <= radius * (1 + 1e-10)
            radius = row["radius"]

    S = Sphere(2)
    t = S.random_point(rng)
    for _ in range(20):
        x0 = S.random_point(rng)
        if S.dist(x0, t) > 0.95 * np.pi:
            x0 = S.exp(t, 0.9 * S.log(t, x0))
        res = trust_region_minimize(lambda x: 0.5 * S.dist(x, t) ** 2, lambda x: -S.log(x, t), S, x0, cfg)
        worst_err = max(worst_err, S.dist(res.x, t))
        audit(res, 0.5 * S.dist(x0, t) ** 2)
    M = SPD(3)
    T = M.random_point(rng)
    logT = la.logm_spd(T)

    def f(X):
        return float(np.sum((la.logm_spd(X) - logT) ** 2))

    def g(X):
        return M.egrad2rgrad(X, 2.0 * la.dlogm(X, la.logm_spd(X) - logT))

    for _ in range(20):
        X0 = M.random_point(rng)
        res = trust_region_minimize(f, g, M, X0, cfg)
        worst_err = max(worst_err, M.dist(res.x, T))
        audit(res, f(X0))
    elapsed = time.perf_counter() - t0
    ok = worst_err <= 1e-5 and max_iter <= 50 and monotone and in_radius and elapsed < 30.0
    acceptance(7, ok, f"max error {worst_err:.1e}, max iterations {max_iter}, monotone {monotone}, "
                      f"tCG within radius {in_radius}, {elapsed:.2f} s")


# ---------------------------------------------------------------- 8: constrained queries


def test_criterion_8_spd_bounds(acceptance):
    lo, hi = 0.001, 5.0
    space = SearchSpace("spd", 5, (lo, hi))
    n_q, n_bad = 0, 0
    for trial in range(2):
        obj = make_embedded_objective("spd", 5, 2, "rosenbrock", 800 + trial, (lo, hi))
        for method in ("hd_gabo", "gabo"):
            cfg = BoConfig(method, n_iter=100, latent_dim=2, rng_seed=900 + trial, init_seed=950 + trial)
            for o in run_method(obj, space, cfg).history:
                w = np.linalg.eigvalsh(o.x)
                n_q += 1
                n_bad += not (w[0] >= lo - 1e-8 and w[-1] <= hi + 1e-8)
    acceptance(8, n_bad == 0, f"{n_q - n_bad}/{n_q} queries inside [{lo}, {hi}]")


# ---------------------------------------------------------------- 9-11: experiments


def _experiment(tmp_dir, **overrides):
    base = {"space.kind": "sphere", "space.dim_D": 10, "space.dim_d": 2, "iters": 100, "n_init": 5,
            "seed": MASTER_SEED, "jobs": default_jobs(), "deterministic": True, "out_dir": str(tmp_dir)}
    base.update(overrides)
    cfg = config_from_mapping(base)
    t0 = time.perf_counter()
    out, outcomes = run_experiment(cfg)
    return out, outcomes, time.perf_counter() - t0


def _ordering(records, rivals):
    hd = final_regrets(records, "hd_gabo")
    lines, ok = [], True
    for rival in rivals:
        other = final_regrets(records, rival)
        trials = sorted(set(hd) & set(other))
        a = [hd[t] for t in trials]
        b = [other[t] for t in trials]
        wins, n, p = paired_sign_test(a, b)
        better = np.median(a) < np.median(b) and p < 0.05
        ok &= better
        lines.append(f"vs {rival}: median {_fmt_regret(np.median(a))} vs {_fmt_regret(np.median(b))}, "
                     f"{wins}/{n} wins, p={p:.3g}")
    return ok, lines


@pytest.fixture(scope="module")
def sphere_runs(tmp_path_factory):
    runs = {}
    for fn in ("ackley", "product_of_sines"):
        d = tmp_path_factory.mktemp(f"c9_{fn}")
        runs[fn] = _experiment(d, objective=fn, trials=20, methods="hd_gabo,random,euclidean_gp")
    return runs


def test_criterion_9_sphere_ordering(acceptance, sphere_runs):
    ok, parts = True, []
    total = 0.0
    aborts = 0
    for fn, (out, outcomes, elapsed) in sphere_runs.items():
        total += elapsed
        aborts += sum(len(o.aborts) for o in outcomes)
        good, lines = _ordering(read_records(out / "records.csv"), ["random", "euclidean_gp"])
        ok &= good
        parts.append(f"{fn}: " + "; ".join(lines))
    budget = 15 * 60 * BUDGET_SCALE
    ok &= total < budget and aborts == 0
    acceptance(9, ok, " | ".join(parts) + f" | {total / 60:.1f} min (budget {budget / 60:.0f} min on {CORES} cores), "
                                          f"{aborts} aborts")


def test_criterion_10_spd_ordering(acceptance, tmp_path):
    out, outcomes, elapsed = _experiment(tmp_path, **{"space.kind": "spd", "space.dim_D": 5, "space.eig_lo": 0.001,
                                                      "space.eig_hi": 5.0, "objective": "rosenbrock",
                                                      "trials": 15, "methods": "hd_gabo,random"})
    ok, lines = _ordering(read_records(out / "records.csv"), ["random"])
    budget = 20 * 60 * BUDGET_SCALE
    aborts = sum(len(o.aborts) for o in outcomes)
    ok &= elapsed < budget and aborts == 0
    acceptance(10, ok, "; ".join(lines) + f" | {elapsed / 60:.1f} min (budget {budget / 60:.0f} min), {aborts} aborts")


def test_criterion_11_determinism(acceptance, sphere_runs, tmp_path_factory):
    same = {}
    for fn, (out, _, _) in sphere_runs.items():
        again, _, _ = _experiment(tmp_path_factory.mktemp(f"c11_{fn}"), objective=fn, trials=20,
                                  methods="hd_gabo,random,euclidean_gp")
        same[fn] = (out / "records.csv").read_bytes() == (again / "records.csv").read_bytes()
    acceptance(11, all(same.values()),
               ", ".join(f"{fn}: {'byte-identical' if ok else 'differs'}" for fn, ok in same.items()))
