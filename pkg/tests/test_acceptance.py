"""End-to-end acceptance battery; each test carries its criterion label and the
terminal summary prints one PASS/FAIL line per criterion."""

import functools
import time

import numpy as np
import pytest

from singopt.analysis import fit_rate, measure_decrease, rate_of, trace_sequence, verify_linear_rate
from singopt.conditions import (
    EB,
    LOJA,
    PL,
    QG,
    RegionSpec,
    check_mb,
    estimate_all,
    fit_loja_exponent,
    shrink_study,
    verify_implications,
)
from singopt.problems import build_problem, start_near_S
from singopt.solvers import (
    GRAD_TOL,
    ARCConfig,
    GDConfig,
    NewtonConfig,
    RTRConfig,
    run_arc,
    run_gd,
    run_newton,
    run_rtr,
)
from singopt.subsolvers import (
    CUBIC_MODES,
    EXACT_SECULAR,
    ModelData,
    arc_step_bound,
    solve_cubic,
    solve_trs_exact,
)

ARC_PROBLEMS = [
    ("circle", {}),
    ("newton_trap", {}),
    ("overparam_regression", {"m": 6, "n": 3, "seed": 0}),
    ("burer_monteiro", {"p": 3, "r": 2, "seed": 0}),
]


def _arc_run(name, params, mode):
    p = build_problem(name, **params)
    x0 = start_near_S(p, 0.2, np.random.default_rng(0))
    t0 = time.perf_counter()
    trace = run_arc(p, x0, ARCConfig(mode=mode))
    return p, x0, trace, time.perf_counter() - t0


@pytest.mark.acceptance("1")
class TestNewtonTrap:
    @pytest.mark.parametrize("t", [1e-2, 1e-4, 1e-6])
    def test_first_iterate_distance(self, newton_trap, t):
        x0 = np.array([np.sqrt((1 - t) / 3), np.sqrt(t)])
        t0 = time.perf_counter()
        trace = run_newton(newton_trap, x0, NewtonConfig(max_iters=1))
        elapsed = time.perf_counter() - t0
        expected = (2 / 3) * (1 - t) / np.sqrt(t)
        assert elapsed < 1.0
        assert abs(trace.records[1].dist_S - expected) <= 1e-9


@pytest.mark.acceptance("2")
class TestTrsHardCase:
    @staticmethod
    def _model(circle, t):
        x = np.array([0.0, 1.0 - t])
        return ModelData(circle.grad(x), circle.hess(x))

    @pytest.mark.parametrize("t", [0.2, 0.1, 1e-2, 1e-3, 1e-4])
    def test_multiplier(self, circle, t):
        sol = solve_trs_exact(self._model(circle, t), 0.5)
        assert abs(sol.lam - 4 * t * (2 - t)) <= 1e-8
        assert sol.on_boundary

    def test_step_tends_to_boundary(self, circle):
        sol = solve_trs_exact(self._model(circle, 1e-4), 0.5)
        assert abs(sol.s[0]) >= 0.4998

    @pytest.mark.parametrize("t", [0.2, 1e-2, 1e-4])
    def test_matches_grid_minimum(self, circle, t):
        md = self._model(circle, t)
        delta = 0.5
        sol = solve_trs_exact(md, delta)
        g = np.linspace(-delta, delta, 2001)
        X, Y = np.meshgrid(g, g)
        S = np.column_stack([X.ravel(), Y.ravel()])
        S = S[np.linalg.norm(S, axis=1) <= delta]
        ang = np.linspace(0, 2 * np.pi, 20001)
        S = np.vstack([S, delta * np.column_stack([np.cos(ang), np.sin(ang)])])
        vals = _quad_values(S, md)
        assert abs(sol.model_value - vals.min()) <= 1e-6
        assert sol.model_value <= vals.min() + 1e-12


@pytest.mark.acceptance("3")
class TestArcQuadratic:
    @pytest.mark.parametrize("mode", CUBIC_MODES)
    @pytest.mark.parametrize("name,params", ARC_PROBLEMS, ids=[n for n, _ in ARC_PROBLEMS])
    def test_quadratic_order(self, name, params, mode):
        p, x0, trace, elapsed = _arc_run(name, params, mode)
        assert 0.05 <= p.dist_to_S(x0) <= 0.3
        assert elapsed < 5.0
        assert trace.termination == GRAD_TOL
        assert trace.final().dist_S <= 1e-10
        assert rate_of(trace, "dist_S").order_q >= 1.8


@pytest.mark.acceptance("4")
class TestRtrCauchyLinear:
    def test_distance_ratio(self):
        p = build_problem("aniso_quad", a=2, b=8)
        trace = run_rtr(p, np.array([0.0, 1.0, 1.0]), RTRConfig(subsolver="cauchy", max_iters=2000))
        assert trace.termination == GRAD_TOL
        assert trace.final().grad_norm <= 1e-12
        assert trace.final().dist_S <= 1e-12
        # omega = 1 / (2 lambda_max) gives 1 - 2 omega mu = 1 - mu / lambda_max
        rep = verify_linear_rate(trace, mu=2.0, omega=1 / 16)
        assert abs(rep.dist_bound - 0.886) < 1e-3
        assert rep.dist_ratio <= rep.dist_bound


@pytest.mark.acceptance("5")
class TestConstantCoherence:
    def test_circle_constants(self, circle):
        region = RegionSpec(np.array([1.0, 0.0]), 0.05)
        est = estimate_all(circle, region)
        mb = check_mb(circle, np.array([1.0, 0.0]))
        for mu in (est[PL].mu_hat, est[EB].mu_hat, est[QG].mu_hat, mb.mu_mb):
            assert 0.9 * 8 <= mu <= 1.05 * 8
        rep = verify_implications([est[PL], est[EB], est[QG]], mb, slack=0.9)
        assert all(e.passed for e in rep.edges)


@pytest.mark.acceptance("6")
class TestC1Counterexamples:
    def test_qg_without_eb(self):
        p = build_problem("qg_not_eb")
        region = RegionSpec(np.zeros(1), 0.1)
        table = shrink_study(p, region, levels=3, factor=0.1)
        assert min(table[QG]) >= 1.8
        assert max(table[PL]) < 0.1
        assert max(table[EB]) < 0.1
        est = estimate_all(p, region)
        assert verify_implications([est[PL], est[EB], est[QG]]).counterexample

    def test_cross_pl_without_manifold(self):
        p = build_problem("cross_c1")
        table = shrink_study(p, RegionSpec(np.zeros(2), 0.1), levels=3, factor=0.1)
        pl = np.array(table[PL])
        assert np.all(pl > 0)
        assert pl.min() >= 0.5 * pl.max()
        assert p.oracle.is_submanifold is False


@pytest.mark.acceptance("7")
class TestGradientDescentRates:
    def test_constant_step_ratio(self):
        p = build_problem("quadratic", diag=[2.0])
        trace = run_gd(p, np.array([1.0]), GDConfig(gamma=0.25, max_iters=40))
        f = trace.column("f")
        f = f[f > 1e-300]
        assert np.all(np.abs(f[1:] / f[:-1] - 0.25) <= 1e-12)

    def test_quartic_sublinear(self):
        p = build_problem("quartic1d")
        trace = run_gd(p, np.array([1.0]), GDConfig(gamma=0.1, max_iters=1000))
        assert trace.final().dist_S > 1e-3
        assert fit_rate(trace_sequence(trace, "dist_S"), tail=50).classification == "sublinear"

    def test_quartic_newton_ratio(self):
        p = build_problem("quartic1d")
        trace = run_newton(p, np.array([1.0]), NewtonConfig(max_iters=60))
        x = np.abs(trace_sequence(trace, "dist_S"))
        x = x[x > 1e-300]
        assert np.all(np.abs(x[1:] / x[:-1] - 2 / 3) <= 1e-10)


@pytest.mark.acceptance("8")
class TestPathLength:
    @pytest.mark.parametrize(
        "run,cfg",
        [(run_gd, GDConfig(max_iters=2000)), (run_rtr, RTRConfig(subsolver="cauchy", max_iters=2000))],
        ids=["armijo_gd", "rtr_cauchy"],
    )
    def test_bpl_bound(self, circle, run, cfg):
        x0 = start_near_S(circle, 0.2, np.random.default_rng(0))
        assert abs(circle.dist_to_S(x0) - 0.2) < 1e-12
        mu = estimate_all(circle, RegionSpec(circle.anchor, 0.25))[PL].mu_hat
        trace = run(circle, x0, cfg)
        rep = measure_decrease(trace, theta=0.5, mu=mu, f_star=0.0)
        assert rep.violations == 0
        assert rep.path_length <= rep.bpl_bound


def _quad_values(S, md):
    return S @ md.g + 0.5 * np.sum((S @ md.H) * S, axis=1)


def _random_instance(rng):
    n = int(rng.integers(1, 7))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(-2, 2, n)
    g = rng.standard_normal(n)
    if rng.uniform() < 0.15:
        w[0] = w.min() - rng.uniform(0, 1)
        g -= (g @ Q[:, 0]) * Q[:, 0]
    return ModelData(g, Q @ np.diag(w) @ Q.T)


@functools.lru_cache(maxsize=None)
def _unit_ball(n):
    """41^n grid points for n <= 3, else 10^6 uniform samples; scaled per instance."""
    if n <= 3:
        axis = np.linspace(-1.0, 1.0, 41)
        S = np.stack(np.meshgrid(*[axis] * n), -1).reshape(-1, n)
        return S[np.linalg.norm(S, axis=1) <= 1.0]
    rng = np.random.default_rng(n)
    count = 1_000_000
    u = rng.standard_normal((count, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * rng.uniform(size=(count, 1)) ** (1 / n)


def _ball_samples(n, radius):
    return radius * _unit_ball(n)


@pytest.mark.acceptance("9")
class TestSubsolverOracle:
    N_INSTANCES = 1000

    def test_trs_dominates_sampling(self):
        rng = np.random.default_rng(9)
        for _ in range(self.N_INSTANCES):
            md = _random_instance(rng)
            delta = float(rng.uniform(0.1, 2.0))
            sol = solve_trs_exact(md, delta)
            assert np.linalg.norm(sol.s) <= delta * (1 + 1e-10)
            S = _ball_samples(md.dim, delta)
            vals = _quad_values(S, md)
            assert sol.model_value <= vals.min() + 1e-6

    def test_cubic_dominates_sampling_and_certifies(self):
        rng = np.random.default_rng(10)
        for _ in range(self.N_INSTANCES):
            md = _random_instance(rng)
            sigma = float(rng.uniform(0.1, 5.0))
            sol = solve_cubic(md, sigma, mode=EXACT_SECULAR)
            radius = 3 * max(np.linalg.norm(sol.s), 1e-3)
            S = _ball_samples(md.dim, radius)
            vals = (
                _quad_values(S, md)
                + sigma / 3 * np.linalg.norm(S, axis=1) ** 3
            )
            assert sol.model_value <= vals.min() + 1e-6
            for mode in CUBIC_MODES:
                assert solve_cubic(md, sigma, mode=mode).certified

    @pytest.mark.parametrize("mode", CUBIC_MODES)
    @pytest.mark.parametrize("name,params", ARC_PROBLEMS, ids=[n for n, _ in ARC_PROBLEMS])
    def test_arc_step_bound(self, name, params, mode):
        _, _, trace, _ = _arc_run(name, params, mode)
        for r in trace.records[:-1]:
            assert r.step_norm <= arc_step_bound(r.grad_norm, r.reg, r.lam_min) * (1 + 1e-12)


C2_CATALOG = [
    ("quartic1d", {}),
    ("quadratic", {"diag": [2.0, 0.0]}),
    ("newton_trap", {}),
    ("circle", {}),
    ("aniso_quad", {"a": 2, "b": 8}),
    ("sphere_band", {}),
    ("overparam_regression", {"m": 6, "n": 3, "seed": 0}),
    ("burer_monteiro", {"p": 3, "r": 2, "seed": 0}),
]


@pytest.mark.acceptance("10")
class TestExponentFloor:
    @pytest.mark.parametrize("name,params", C2_CATALOG, ids=[n for n, _ in C2_CATALOG])
    def test_theta_floor(self, name, params):
        p = build_problem(name, **params)
        est = fit_loja_exponent(p, RegionSpec(p.anchor, 0.1))
        assert est.kind == LOJA
        assert est.theta_hat >= 0.48

    def test_quartic_exponent(self):
        p = build_problem("quartic1d")
        est = fit_loja_exponent(p, RegionSpec(p.anchor, 0.1))
        assert abs(est.theta_hat - 0.75) <= 0.02


@pytest.mark.acceptance("sphere")
class TestSphereSubstitute:
    @pytest.mark.parametrize("mode", CUBIC_MODES)
    def test_arc_on_sphere(self, mode):
        p = build_problem("sphere_band")
        x0 = start_near_S(p, 0.2, np.random.default_rng(0))
        trace = run_arc(p, x0, ARCConfig(mode=mode))
        assert trace.termination == GRAD_TOL
        assert rate_of(trace, "dist_S").order_q >= 1.8
        M = p.manifold
        for a, b in zip(trace.records, trace.records[1:]):
            assert np.linalg.norm(b.x) == pytest.approx(1.0, abs=1e-12)
            if a.accepted:
                assert M.dist(a.x, b.x) <= M.c_r * a.step_norm * (1 + 1e-12) + 1e-15
