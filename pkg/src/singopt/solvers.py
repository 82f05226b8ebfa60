"""Outer iterations: gradient descent, Newton, adaptive cubic regularization
(ARC) and Riemannian trust regions (RTR).

Every solver returns a :class:`Trace`. Row ``k`` of a trace describes the
iterate ``x_k`` (cost, gradient norm, distance to S) together with the step
attempted from it (step norm, acceptance ratio, regularization state,
acceptance flag). The final row holds the last iterate and has no step.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, UnsupportedOperation
from .problems import Problem
from .subsolvers import (
    CUBIC_MODES,
    EXACT_SECULAR,
    ModelData,
    cauchy_step,
    newton_step,
    solve_cubic,
    solve_trs_exact,
    solve_trs_tcg,
)

GRAD_TOL = "grad_tol"
MAX_ITERS = "max_iters"
STALL = "stall"
DIVERGENCE = "divergence"

NAN = float("nan")


# ------------------------------------------------------------------ configs


@dataclass(frozen=True)
class _Shared:
    grad_tol: float = 1e-12
    max_iters: int = 500
    record_points: bool = True

    def _check_shared(self):
        if not self.grad_tol > 0:
            raise ConfigError("grad_tol must be positive")
        if int(self.max_iters) < 0:
            raise ConfigError("max_iters must be nonnegative")


@dataclass(frozen=True)
class GDConfig(_Shared):
    """Constant step ``gamma`` or, when ``gamma`` is None, Armijo backtracking."""

    gamma: float | None = None
    alpha_bar: float = 1.0
    beta: float = 0.5
    sigma_A: float = 1e-4

    algorithm = "gd"

    def __post_init__(self):
        self._check_shared()
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.gamma is None:
            if not self.alpha_bar > 0:
                raise ConfigError("alpha_bar must be positive")
            if not 0 < self.beta < 1:
                raise ConfigError("beta must lie in (0, 1)")
            if not 0 < self.sigma_A < 1:
                raise ConfigError("sigma_A must lie in (0, 1)")


@dataclass(frozen=True)
class NewtonConfig(_Shared):
    rank_tol: float = 1e-14

    algorithm = "newton"

    def __post_init__(self):
        self._check_shared()
        if not self.rank_tol > 0:
            raise ConfigError("rank_tol must be positive")


@dataclass(frozen=True)
class ARCConfig(_Shared):
    sigma0: float = 1.0
    sigma_min: float = 1e-6
    rho_c: float = 0.1
    gamma_inc: float = 2.0
    gamma_dec: float = 0.5
    kappa: float = 0.1
    beta_H_budget: float = 0.0
    perturb_hessian: bool = False
    perturb_seed: int = 0
    mode: str = EXACT_SECULAR

    algorithm = "arc"

    def __post_init__(self):
        self._check_shared()
        if not (self.sigma0 > 0 and self.sigma_min > 0):
            raise ConfigError("sigma0 and sigma_min must be positive")
        if not 0 < self.rho_c < 1:
            raise ConfigError("rho_c must lie in (0, 1)")
        if not self.gamma_inc > 1:
            raise ConfigError("gamma_inc must exceed 1")
        if not 0 < self.gamma_dec <= 1:
            raise ConfigError("gamma_dec must lie in (0, 1]")
        if self.kappa < 0 or self.beta_H_budget < 0:
            raise ConfigError("kappa and beta_H_budget must be nonnegative")
        if self.mode not in CUBIC_MODES:
            raise ConfigError(f"unknown cubic mode {self.mode!r}")


RTR_SUBSOLVERS = ("cauchy", "exact", "tcg")


@dataclass(frozen=True)
class RTRConfig(_Shared):
    delta0: float = 1.0
    delta_bar: float = 16.0
    rho_prime: float = 0.1
    subsolver: str = "cauchy"
    kappa_tcg: float = 0.1
    theta_tcg: float = 1.0

    algorithm = "rtr"

    def __post_init__(self):
        self._check_shared()
        if not (self.delta0 > 0 and self.delta_bar >= self.delta0):
            raise ConfigError("need 0 < delta0 <= delta_bar")
        if not 0 < self.rho_prime < 0.25:
            raise ConfigError("rho_prime must lie in (0, 1/4)")
        if self.subsolver not in RTR_SUBSOLVERS:
            raise ConfigError(f"unknown RTR subsolver {self.subsolver!r}")


_CONFIGS = {c.algorithm: c for c in (GDConfig, NewtonConfig, ARCConfig, RTRConfig)}
ALGORITHMS = tuple(_CONFIGS)


def make_config(algorithm: str, **options):
    """Build a solver config from an algorithm name and keyword options."""
    try:
        cls = _CONFIGS[algorithm]
    except KeyError:
        raise ConfigError(f"unknown algorithm {algorithm!r}") from None
    allowed = {f.name for f in fields(cls)}
    unknown = set(options) - allowed
    if unknown:
        raise ConfigError(f"unknown options for {algorithm}: {sorted(unknown)}")
    return cls(**options)


# ------------------------------------------------------------------- traces


@dataclass
class IterRecord:
    k: int
    f: float
    grad_norm: float
    dist_S: float = NAN
    step_norm: float = NAN
    ratio: float = NAN
    reg: float = NAN
    accepted: bool | None = None
    x: np.ndarray | None = None
    lam_min: float = NAN


CSV_FIELDS = ("k", "f", "grad_norm", "dist_S", "step_norm", "ratio", "reg", "accepted")


@dataclass
class Trace:
    solver: str
    records: list[IterRecord] = field(default_factory=list)
    termination: str = MAX_ITERS
    x_final: np.ndarray | None = None
    grad_tol: float = 1e-12
    manifold: object = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    def final(self) -> IterRecord:
        return self.records[-1]

    def distinct(self) -> list[IterRecord]:
        """Records of distinct iterates: the first row plus every row reached
        by an accepted step."""
        out = self.records[:1]
        for prev, cur in zip(self.records, self.records[1:]):
            if prev.accepted:
                out.append(cur)
        return out


def _finite(*vals) -> bool:
    return all(np.all(np.isfinite(v)) for v in vals)


class _Frame:
    """Cost, gradient and Hessian at a point in tangent-basis coordinates."""

    def __init__(self, p: Problem, x, need_hess: bool):
        self.x = x
        self.f = p.f(x)
        g = p.grad(x)
        self.gn = float(np.linalg.norm(g))
        self.g = g
        self.B = None
        self.md = None
        if need_hess and _finite(self.f, g):
            if p.manifold.kind == "euclidean":
                H = p.hess(x)
                self.md = ModelData(g, H)
            else:
                B, H = p.hess_tangent(x)
                self.B = B
                self.md = ModelData(B.T @ g, H)

    def lift(self, s):
        return s if self.B is None else self.B @ s


class _Runner:
    def __init__(self, p: Problem, x0, cfg, name: str):
        if cfg.algorithm != "gd" and not p.is_c2:
            raise UnsupportedOperation(f"{name} needs second derivatives; {p.name} is C1")
        self.p = p
        self.cfg = cfg
        self.trace = Trace(name, grad_tol=cfg.grad_tol, manifold=p.manifold)
        self.x = p.manifold.check_point(np.array(x0, dtype=float))

    def dist(self, x) -> float:
        if self.p.oracle is None:
            return NAN
        try:
            return self.p.dist_to_S(x)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            return NAN

    def open_row(self, fr: _Frame) -> IterRecord:
        rec = IterRecord(
            k=len(self.trace.records),
            f=fr.f,
            grad_norm=fr.gn,
            dist_S=self.dist(fr.x) if _finite(fr.x) else NAN,
            x=fr.x.copy() if self.cfg.record_points else None,
        )
        self.trace.records.append(rec)
        return rec

    def check_stop(self, fr: _Frame) -> bool:
        if not _finite(fr.f, fr.g):
            self.trace.termination = DIVERGENCE
            return True
        if fr.gn <= self.cfg.grad_tol:
            self.trace.termination = GRAD_TOL
            return True
        return False

    def close(self, termination: str | None = None):
        if termination is not None:
            self.trace.termination = termination
        self.trace.x_final = self.x.copy()
        return self.trace


def _lam_min(md: ModelData | None) -> float:
    if md is None or md.dim == 0:
        return NAN
    return float(np.linalg.eigvalsh(md.H)[0])


# ------------------------------------------------------------------ solvers


def _quiet(run):
    """Overflow is reported as a divergence termination, not as a warning."""

    @functools.wraps(run)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return run(*args, **kwargs)

    return wrapper


@_quiet
def run_gd(p: Problem, x0, cfg: GDConfig) -> Trace:
    """Riemannian gradient descent with constant step or Armijo backtracking."""
    run = _Runner(p, x0, cfg, "gd")
    M = p.manifold
    for _ in range(cfg.max_iters + 1):
        fr = _Frame(p, run.x, need_hess=False)
        rec = run.open_row(fr)
        if run.check_stop(fr):
            return run.close()
        if rec.k == cfg.max_iters:
            return run.close(MAX_ITERS)
        if cfg.gamma is not None:
            alpha = cfg.gamma
            x_new = M.retract(run.x, -alpha * fr.g)
        else:
            alpha = cfg.alpha_bar
            while True:
                x_new = M.retract(run.x, -alpha * fr.g)
                f_new = p.f(x_new)
                if np.isfinite(f_new) and fr.f - f_new >= cfg.sigma_A * alpha * fr.gn**2:
                    break
                alpha *= cfg.beta
                if alpha * fr.gn < 1e-300 or alpha < 1e-30:
                    rec.reg = alpha
                    return run.close(STALL)
        rec.step_norm = alpha * fr.gn
        rec.reg = alpha
        rec.accepted = True
        run.x = x_new
    return run.close(MAX_ITERS)


@_quiet
def run_newton(p: Problem, x0, cfg: NewtonConfig) -> Trace:
    """Undamped Newton iteration with a pseudo-inverse step."""
    run = _Runner(p, x0, cfg, "newton")
    M = p.manifold
    for _ in range(cfg.max_iters + 1):
        fr = _Frame(p, run.x, need_hess=True)
        rec = run.open_row(fr)
        if run.check_stop(fr):
            return run.close()
        if rec.k == cfg.max_iters:
            return run.close(MAX_ITERS)
        rec.lam_min = _lam_min(fr.md)
        s = fr.lift(newton_step(fr.md, cfg.rank_tol))
        rec.step_norm = float(np.linalg.norm(s))
        rec.accepted = True
        if rec.step_norm == 0.0:
            return run.close(STALL)
        run.x = M.retract(run.x, s) if _finite(s) else run.x + np.nan
        if not _finite(run.x):
            run.trace.records.append(IterRecord(k=rec.k + 1, f=NAN, grad_norm=NAN))
            return run.close(DIVERGENCE)
    return run.close(MAX_ITERS)


def _perturbation(rng, dim: int, size: float) -> np.ndarray:
    E = rng.standard_normal((dim, dim))
    E = 0.5 * (E + E.T)
    nrm = np.linalg.norm(E, 2)
    return E * (size * rng.uniform() / nrm) if nrm > 0 else E


@_quiet
def run_arc(p: Problem, x0, cfg: ARCConfig) -> Trace:
    """Adaptive cubic regularization with the exact Riemannian Hessian.

    With ``perturb_hessian`` the model Hessian is replaced by
    ``H + E`` where ``|E| <= beta_H_budget * |grad f|``.
    """
    run = _Runner(p, x0, cfg, "arc")
    M = p.manifold
    rng = np.random.default_rng(cfg.perturb_seed)
    sigma = cfg.sigma0
    for _ in range(cfg.max_iters + 1):
        fr = _Frame(p, run.x, need_hess=True)
        rec = run.open_row(fr)
        if run.check_stop(fr):
            return run.close()
        if rec.k == cfg.max_iters:
            return run.close(MAX_ITERS)
        md = fr.md
        if cfg.perturb_hessian and cfg.beta_H_budget > 0:
            md = ModelData(md.g, md.H + _perturbation(rng, md.dim, cfg.beta_H_budget * fr.gn))
        rec.lam_min = _lam_min(md)
        sol = solve_cubic(md, sigma, cfg.kappa, cfg.mode)
        s = fr.lift(sol.s)
        ns = float(np.linalg.norm(sol.s))
        x_trial = M.retract(run.x, s)
        f_trial = p.f(x_trial)
        denom = -sol.model_value + sigma * ns**3 / 3.0
        if denom == 0.0:
            ratio = 1.0
        elif np.isfinite(f_trial):
            ratio = (fr.f - f_trial) / denom
        else:
            ratio = -math.inf
        rec.step_norm = ns
        rec.ratio = ratio
        rec.reg = sigma
        rec.accepted = bool(ratio >= cfg.rho_c)
        if rec.accepted:
            run.x = x_trial
            sigma = max(cfg.sigma_min, cfg.gamma_dec * sigma)
        else:
            sigma = cfg.gamma_inc * sigma
        if ns == 0.0 or sigma > 1e300:
            fr2 = _Frame(p, run.x, need_hess=False)
            run.open_row(fr2)
            return run.close(STALL)
    return run.close(MAX_ITERS)


@_quiet
def run_rtr(p: Problem, x0, cfg: RTRConfig) -> Trace:
    """Riemannian trust-region method with a Cauchy, exact or tCG inner solver."""
    run = _Runner(p, x0, cfg, f"rtr_{cfg.subsolver}")
    M = p.manifold
    delta = cfg.delta0
    for _ in range(cfg.max_iters + 1):
        fr = _Frame(p, run.x, need_hess=True)
        rec = run.open_row(fr)
        if run.check_stop(fr):
            return run.close()
        if rec.k == cfg.max_iters:
            return run.close(MAX_ITERS)
        md = fr.md
        rec.lam_min = _lam_min(md)
        if cfg.subsolver == "cauchy":
            s_b = cauchy_step(md, delta)
        elif cfg.subsolver == "exact":
            s_b = solve_trs_exact(md, delta).s
        else:
            s_b = solve_trs_tcg(md, delta, cfg.kappa_tcg, cfg.theta_tcg)
        s = fr.lift(s_b)
        ns = float(np.linalg.norm(s_b))
        x_trial = M.retract(run.x, s)
        f_trial = p.f(x_trial)
        decrease = -md.quad(s_b)
        if decrease == 0.0:
            rho = 1.0
        elif np.isfinite(f_trial):
            rho = (fr.f - f_trial) / decrease
        else:
            rho = -math.inf
        rec.step_norm = ns
        rec.ratio = rho
        rec.reg = delta
        rec.accepted = bool(rho > cfg.rho_prime)
        if rho < 0.25:
            delta = 0.25 * delta
        elif rho > 0.75 and abs(ns - delta) <= 1e-12 * max(1.0, delta):
            delta = min(2 * delta, cfg.delta_bar)
        if rec.accepted:
            run.x = x_trial
        if ns == 0.0 or delta < 1e-300:
            run.open_row(_Frame(p, run.x, need_hess=False))
            return run.close(STALL)
    return run.close(MAX_ITERS)


_RUNNERS = {"gd": run_gd, "newton": run_newton, "arc": run_arc, "rtr": run_rtr}


def run_solver(p: Problem, x0, cfg) -> Trace:
    return _RUNNERS[cfg.algorithm](p, x0, cfg)


def with_options(cfg, **changes):
    return replace(cfg, **changes)
