import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singopt.analysis import rate_of
from singopt.conditions import RegionSpec, estimate_pl
from singopt.errors import ConfigError, UnsupportedOperation
from singopt.problems import build_problem, start_near_S
from singopt.solvers import (
    DIVERGENCE,
    GRAD_TOL,
    MAX_ITERS,
    ARCConfig,
    GDConfig,
    NewtonConfig,
    RTRConfig,
    make_config,
    run_arc,
    run_gd,
    run_newton,
    run_rtr,
    run_solver,
)
from singopt.subsolvers import INEXACT_GRADIENT, ModelData, arc_step_bound, solve_trs_exact

SOLVER_CFGS = [
    GDConfig(max_iters=300),
    NewtonConfig(max_iters=100),
    ARCConfig(),
    ARCConfig(mode=INEXACT_GRADIENT),
    RTRConfig(subsolver="cauchy", max_iters=1000),
    RTRConfig(subsolver="exact"),
    RTRConfig(subsolver="tcg"),
]
CFG_IDS = ["gd", "newton", "arc", "arc_inexact", "rtr_cauchy", "rtr_exact", "rtr_tcg"]


class TestConfigs:
    @pytest.mark.parametrize(
        "algorithm,options",
        [
            ("gd", {"gamma": -1.0}),
            ("gd", {"beta": 1.0}),
            ("arc", {"gamma_inc": 1.0}),
            ("arc", {"rho_c": 1.5}),
            ("arc", {"mode": "lanczos"}),
            ("rtr", {"rho_prime": 0.3}),
            ("rtr", {"delta0": 4.0, "delta_bar": 2.0}),
            ("rtr", {"subsolver": "dogleg"}),
            ("newton", {"rank_tol": 0.0}),
            ("arc", {"unknown": 1}),
            ("bfgs", {}),
        ],
    )
    def test_invalid(self, algorithm, options):
        with pytest.raises(ConfigError):
            make_config(algorithm, **options)

    def test_defaults(self):
        cfg = make_config("arc")
        assert (cfg.sigma0, cfg.sigma_min, cfg.rho_c, cfg.kappa) == (1.0, 1e-6, 0.1, 0.1)
        assert (cfg.gamma_inc, cfg.gamma_dec) == (2.0, 0.5)
        rtr = make_config("rtr")
        assert (rtr.delta0, rtr.delta_bar, rtr.rho_prime) == (1.0, 16.0, 0.1)
        assert rtr.grad_tol == 1e-12 and rtr.max_iters == 500


class TestExamples:
    def test_gd_at_critical_point(self, circle):
        trace = run_gd(circle, np.array([1.0, 0.0]), GDConfig())
        assert trace.iterations == 0 and trace.termination == GRAD_TOL

    def test_newton_exact_on_quadratic(self):
        p = build_problem("quadratic", diag=[3.0])
        trace = run_newton(p, np.array([5.0]), NewtonConfig())
        assert trace.iterations == 1 and trace.final().f == 0.0

    def test_newton_trap_jump(self, newton_trap):
        trace = run_newton(newton_trap, np.array([np.sqrt(0.33), 0.1]), NewtonConfig(max_iters=1))
        assert trace.records[1].dist_S == pytest.approx(6.6, abs=1e-9)

    def test_arc_circle(self, circle):
        trace = run_arc(circle, np.array([1.3, 0.4]), ARCConfig())
        assert abs(np.linalg.norm(trace.x_final) - 1) <= 1e-10
        assert rate_of(trace).order_q >= 1.8

    def test_arc_quadratic_all_successful(self):
        p = build_problem("quadratic", diag=[2.0, 8.0])
        trace = run_arc(p, np.array([1.0, 1.0]), ARCConfig())
        assert trace.termination == GRAD_TOL
        assert all(r.accepted for r in trace.records[:-1])

    def test_arc_at_minimum(self, circle):
        trace = run_arc(circle, np.array([0.0, 1.0]), ARCConfig())
        assert trace.iterations == 0 and trace.termination == GRAD_TOL

    def test_rtr_exact_jump_on_circle(self, circle):
        x0 = np.array([0.0, 0.99])
        trace = run_rtr(circle, x0, RTRConfig(subsolver="exact", delta0=0.5))
        assert trace.records[0].step_norm == pytest.approx(0.5, abs=1e-12)
        s = solve_trs_exact(ModelData(circle.grad(x0), circle.hess(x0)), 0.5).s
        assert abs(s[0]) >= 0.49
        assert trace.termination == GRAD_TOL

    def test_quartic_gd_sublinear(self):
        trace = run_gd(build_problem("quartic1d"), np.array([1.0]), GDConfig(gamma=0.1, max_iters=1000))
        assert trace.termination == MAX_ITERS
        assert trace.final().dist_S > 1e-3

    def test_gd_divergence(self):
        trace = run_gd(build_problem("quartic1d"), np.array([10.0]), GDConfig(gamma=10.0))
        assert trace.termination == DIVERGENCE

    @pytest.mark.parametrize("cfg", [NewtonConfig(), ARCConfig(), RTRConfig()])
    def test_second_order_needs_c2(self, cfg):
        with pytest.raises(UnsupportedOperation):
            run_solver(build_problem("cross_c1"), np.array([0.3, 0.2]), cfg)

    def test_gd_on_c1(self):
        trace = run_gd(build_problem("qg_not_eb"), np.array([0.05]), GDConfig(max_iters=50))
        assert trace.final().f <= trace.records[0].f

    def test_perturbed_hessian_mode(self, circle):
        cfg = ARCConfig(perturb_hessian=True, beta_H_budget=0.5, perturb_seed=3)
        trace = run_arc(circle, np.array([1.3, 0.4]), cfg)
        assert trace.termination == GRAD_TOL
        for r in trace.records[:-1]:
            assert r.step_norm <= arc_step_bound(r.grad_norm, r.reg, r.lam_min) * (1 + 1e-12)

    def test_sphere_rtr(self):
        p = build_problem("sphere_band")
        trace = run_rtr(p, start_near_S(p, 0.3, np.random.default_rng(1)), RTRConfig(subsolver="tcg"))
        assert trace.termination == GRAD_TOL
        assert trace.final().dist_S <= 1e-10


class TestTraceInvariants:
    @pytest.mark.parametrize("cfg", SOLVER_CFGS, ids=CFG_IDS)
    @pytest.mark.parametrize("name", ["circle", "newton_trap", "sphere_band"])
    def test_descent_and_rejections(self, name, cfg):
        p = build_problem(name)
        x0 = start_near_S(p, 0.2, np.random.default_rng(7))
        trace = run_solver(p, x0, cfg)
        recs = trace.records
        for a, b in zip(recs, recs[1:]):
            if a.accepted:
                if cfg.algorithm != "newton":
                    assert b.f <= a.f
            else:
                np.testing.assert_array_equal(a.x, b.x)
        assert np.isnan(recs[-1].step_norm)
        np.testing.assert_array_equal(recs[-1].x, trace.x_final)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.3), st.sampled_from(range(len(SOLVER_CFGS))))
    def test_descent_property(self, seed, radius, which):
        cfg = SOLVER_CFGS[which]
        if cfg.algorithm == "newton":
            return
        p = build_problem("circle")
        trace = run_solver(p, start_near_S(p, radius, np.random.default_rng(seed)), cfg)
        f = np.array([r.f for r in trace.distinct()])
        assert np.all(np.diff(f) <= 0)


class TestLocalBehaviour:
    def test_vanishing_steps_arc(self, circle):
        cfg = ARCConfig()
        trace = run_arc(circle, np.array([1.3, 0.4]), cfg)
        for r in trace.records[:-1]:
            bound = np.sqrt(3 * r.grad_norm / cfg.sigma_min) + 1.5 / cfg.sigma_min * max(0.0, -r.lam_min)
            assert r.step_norm <= circle.manifold.c_r * bound

    def test_cauchy_step_norm_bound(self, circle):
        mu = estimate_pl(circle, RegionSpec(circle.anchor, 0.25)).mu_hat
        x0 = start_near_S(circle, 0.2, np.random.default_rng(0))
        trace = run_rtr(circle, x0, RTRConfig(subsolver="cauchy"))
        for r in trace.records[:-1]:
            assert r.step_norm <= r.grad_norm / (0.9 * mu) + 1e-15

    @pytest.mark.parametrize(
        "name,params,x0",
        [("circle", {}, [1.3, 0.4]), ("aniso_quad", {"a": 2, "b": 8}, [0.0, 1.0, 1.0])],
    )
    def test_eventual_success(self, name, params, x0):
        p = build_problem(name, **params)
        for run, cfg in ((run_arc, ARCConfig()), (run_rtr, RTRConfig(subsolver="cauchy", max_iters=2000))):
            trace = run(p, np.array(x0), cfg)
            assert trace.termination == GRAD_TOL
            ratios = [r.ratio for r in trace.records[:-1]]
            tail = ratios[-3:]
            assert all(r >= 0.9 for r in tail)

    def test_curvature_sandwich(self, circle):
        mu = estimate_pl(circle, RegionSpec(circle.anchor, 0.1)).mu_hat
        lam_sharp = 1.1 * 8.0
        for x in circle.oracle.sample_near(circle.manifold, np.random.default_rng(0), circle.anchor, 0.5, 20):
            for d in np.linspace(-0.01, 0.01, 11):
                y = x * (1 + d)
                g = circle.grad(y)
                if not np.any(g):
                    continue
                q = g @ circle.hess(y) @ g
                assert 0.9 * mu * (g @ g) <= q <= lam_sharp * (g @ g)
