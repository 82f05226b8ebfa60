"""Benchmark cost functions with analytic derivatives and solution-set oracles.

Every problem is built from a :class:`ProblemSpec` through :func:`build_problem`.
Cost, gradient and Hessian are defined on ambient coordinates; the
:class:`Problem` accessors convert them into Riemannian quantities when the
manifold is the sphere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidInput, UnsupportedOperation
from .geometry import Euclidean, UnitSphere

# shared numerical-rank rule: eigenvalue > RANK_TOL * max(1, lambda_max)
RANK_TOL = 1e-7

C1 = "C1"
C2 = "C2"
ANALYTIC = "analytic"


def numerical_rank(eigenvalues, tol: float = RANK_TOL) -> int:
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        return 0
    thresh = tol * max(1.0, float(np.max(np.abs(ev))))
    return int(np.sum(np.abs(ev) > thresh))


@dataclass(frozen=True)
class SolutionSetOracle:
    """Closed-form (or numerical) access to the set of minimizers S."""

    f_star: float
    dist_to_S: Callable[[np.ndarray], float]
    project_to_S: Callable[[np.ndarray], np.ndarray]
    dim_S: int
    hessian_rank_d: int | None
    is_submanifold: bool = True
    numerical: bool = False

    def sample_near(self, manifold, rng, x_bar, radius: float, count: int = 1):
        """Points of S obtained by projecting random perturbations of ``x_bar``."""
        out = []
        for _ in range(count):
            v = manifold.random_tangent(rng, x_bar)
            nv = np.linalg.norm(v)
            if nv > 0:
                v = v * (radius * rng.uniform() / nv)
            out.append(self.project_to_S(manifold.retract(x_bar, v)))
        return out


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    params: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0


@dataclass(frozen=True)
class Problem:
    name: str
    manifold: Euclidean | UnitSphere
    cost: Callable[[np.ndarray], float]
    egrad: Callable[[np.ndarray], np.ndarray]
    ehess: Callable[[np.ndarray], np.ndarray] | None
    oracle: SolutionSetOracle | None
    smoothness: str
    anchor: np.ndarray
    spec: ProblemSpec

    @property
    def is_c2(self) -> bool:
        return self.smoothness != C1 and self.ehess is not None

    def f(self, x) -> float:
        return float(self.cost(self.manifold.check_point(x)))

    def grad(self, x) -> np.ndarray:
        x = self.manifold.check_point(x)
        return self.manifold.egrad_to_rgrad(x, np.asarray(self.egrad(x), dtype=float))

    def hess(self, x) -> np.ndarray:
        """Riemannian Hessian as a dense symmetric matrix in ambient coordinates."""
        if not self.is_c2:
            raise UnsupportedOperation(f"{self.name} is only C1; no Hessian available")
        x = self.manifold.check_point(x)
        H = np.asarray(self.ehess(x), dtype=float)
        if isinstance(self.manifold, UnitSphere):
            return self.manifold.ehess_to_rhess(x, np.asarray(self.egrad(x), dtype=float), H)
        return H

    def hess_tangent(self, x):
        """Hessian in an orthonormal tangent basis: returns (B, B^T H B)."""
        B = self.manifold.tangent_basis(x)
        H = B.T @ self.hess(x) @ B
        return B, 0.5 * (H + H.T)

    def dist_to_S(self, x) -> float:
        if self.oracle is None:
            raise UnsupportedOperation(f"{self.name} has no solution-set oracle")
        return float(self.oracle.dist_to_S(self.manifold.check_point(x)))

    @property
    def f_star(self) -> float:
        if self.oracle is None:
            raise UnsupportedOperation(f"{self.name} has no solution-set oracle")
        return self.oracle.f_star


def eval_bundle(p: Problem, x):
    """Return ``(f, grad, hess)``; ``hess`` is None for C1 problems."""
    hess = p.hess(x) if p.is_c2 else None
    return p.f(x), p.grad(x), hess


@dataclass(frozen=True)
class DerivativeReport:
    max_rel_err_grad: float
    max_rel_err_hess: float | None
    passed: bool


def check_derivatives(p: Problem, x, h: float = 1e-5, tol: float = 1e-4) -> DerivativeReport:
    """Compare the ambient gradient/Hessian with central finite differences.

    Errors are relative with a unit floor, ``|fd - exact| / max(1, |exact|)``,
    so that a zero derivative is compared in absolute terms.
    """
    if not (1e-8 <= h <= 1e-2):
        raise InvalidInput("finite-difference step must lie in [1e-8, 1e-2]")
    x = np.asarray(x, dtype=float)
    n = x.size
    g = np.asarray(p.egrad(x), dtype=float)
    fd = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd[i] = (p.cost(x + e) - p.cost(x - e)) / (2 * h)
    err_g = float(np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g)))

    err_h = None
    if p.is_c2:
        H = np.asarray(p.ehess(x), dtype=float)
        fdH = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fdH[:, i] = (np.asarray(p.egrad(x + e)) - np.asarray(p.egrad(x - e))) / (2 * h)
        asym = float(np.linalg.norm(H - H.T))
        err_h = max(float(np.linalg.norm(fdH - H) / max(1.0, np.linalg.norm(H))), asym)
    passed = err_g <= tol and (err_h is None or err_h <= tol)
    return DerivativeReport(err_g, err_h, passed)


# ---------------------------------------------------------------- catalog


def _point_oracle(dist, proj, dim_S=0, d=None, **kw):
    return SolutionSetOracle(0.0, dist, proj, dim_S, d, **kw)


def _quartic1d():
    return dict(
        manifold=Euclidean(1),
        cost=lambda x: x[0] ** 4,
        egrad=lambda x: np.array([4 * x[0] ** 3]),
        ehess=lambda x: np.array([[12 * x[0] ** 2]]),
        oracle=_point_oracle(lambda x: abs(x[0]), lambda x: np.zeros(1), 0, 0),
        smoothness=ANALYTIC,
        anchor=np.zeros(1),
    )


def _quadratic(diag):
    d = np.atleast_1d(np.asarray(diag, dtype=float))
    if d.ndim != 1 or d.size == 0 or np.any(d < 0):
        raise InvalidInput("quadratic needs a non-empty nonnegative diag")
    zero = d == 0

    def proj(x):
        return np.where(zero, x, 0.0)

    return dict(
        manifold=Euclidean(d.size),
        cost=lambda x: 0.5 * float(np.dot(d * x, x)),
        egrad=lambda x: d * x,
        ehess=lambda x: np.diag(d),
        oracle=SolutionSetOracle(
            0.0,
            lambda x: float(np.linalg.norm(x[~zero])),
            proj,
            int(zero.sum()),
            int((~zero).sum()),
        ),
        smoothness=ANALYTIC,
        anchor=np.zeros(d.size),
    )


def _newton_trap():
    def cost(v):
        x, y = v
        return 0.5 * (x * x + 1) * y * y

    def egrad(v):
        x, y = v
        return np.array([x * y * y, (x * x + 1) * y])

    def ehess(v):
        x, y = v
        return np.array([[y * y, 2 * x * y], [2 * x * y, x * x + 1]])

    return dict(
        manifold=Euclidean(2),
        cost=cost,
        egrad=egrad,
        ehess=ehess,
        oracle=SolutionSetOracle(
            0.0, lambda v: abs(v[1]), lambda v: np.array([v[0], 0.0]), 1, 1
        ),
        smoothness=ANALYTIC,
        anchor=np.zeros(2),
    )


def _circle():
    def proj(v):
        r = np.linalg.norm(v)
        return np.array([1.0, 0.0]) if r == 0 else v / r

    return dict(
        manifold=Euclidean(2),
        cost=lambda v: (v @ v - 1.0) ** 2,
        egrad=lambda v: 4 * (v @ v - 1.0) * v,
        ehess=lambda v: 4 * (v @ v - 1.0) * np.eye(2) + 8 * np.outer(v, v),
        oracle=SolutionSetOracle(
            0.0, lambda v: abs(np.linalg.norm(v) - 1.0), proj, 1, 1
        ),
        smoothness=ANALYTIC,
        anchor=np.array([1.0, 0.0]),
    )


def _aniso_quad(a=2.0, b=8.0):
    a, b = float(a), float(b)
    if not 0 < a <= b:
        raise InvalidInput("aniso_quad needs 0 < a <= b")
    w = np.array([0.0, a, b])

    return dict(
        manifold=Euclidean(3),
        cost=lambda v: 0.5 * float(np.dot(w * v, v)),
        egrad=lambda v: w * v,
        ehess=lambda v: np.diag(w),
        oracle=SolutionSetOracle(
            0.0,
            lambda v: float(np.hypot(v[1], v[2])),
            lambda v: np.array([v[0], 0.0, 0.0]),
            1,
            2,
        ),
        smoothness=ANALYTIC,
        anchor=np.zeros(3),
    )


def _cross_c1():
    def cost(v):
        x, y = v
        r2 = x * x + y * y
        return 0.0 if r2 == 0 else x * x * y * y / r2

    def egrad(v):
        x, y = v
        r2 = x * x + y * y
        if r2 == 0:
            return np.zeros(2)
        return np.array([2 * x * y**4, 2 * x**4 * y]) / r2**2

    def proj(v):
        x, y = v
        return np.array([x, 0.0]) if abs(y) <= abs(x) else np.array([0.0, y])

    return dict(
        manifold=Euclidean(2),
        cost=cost,
        egrad=egrad,
        ehess=None,
        oracle=SolutionSetOracle(
            0.0,
            lambda v: float(min(abs(v[0]), abs(v[1]))),
            proj,
            1,
            None,
            is_submanifold=False,
        ),
        smoothness=C1,
        anchor=np.zeros(2),
    )


def _qg_not_eb():
    def cost(v):
        x = v[0]
        if x == 0:
            return 0.0
        return 2 * x * x + x * x * np.sin(abs(x) ** -0.5)

    def egrad(v):
        x = v[0]
        if x == 0:
            return np.zeros(1)
        u = abs(x) ** -0.5
        return np.array(
            [x * (4 + 2 * np.sin(u)) - 0.5 * np.sign(x) * np.sqrt(abs(x)) * np.cos(u)]
        )

    return dict(
        manifold=Euclidean(1),
        cost=cost,
        egrad=egrad,
        ehess=None,
        oracle=_point_oracle(lambda v: abs(v[0]), lambda v: np.zeros(1), 0, None),
        smoothness=C1,
        anchor=np.zeros(1),
    )


def _sphere_band():
    M = UnitSphere(3)

    def proj(v):
        e = np.array([v[0], v[1], 0.0])
        ne = np.linalg.norm(e)
        return np.array([1.0, 0.0, 0.0]) if ne == 0 else e / ne

    return dict(
        manifold=M,
        cost=lambda v: v[2] ** 2,
        egrad=lambda v: np.array([0.0, 0.0, 2 * v[2]]),
        ehess=lambda v: np.diag([0.0, 0.0, 2.0]),
        oracle=SolutionSetOracle(
            0.0,
            lambda v: float(np.arctan2(abs(v[2]), np.hypot(v[0], v[1]))),
            proj,
            1,
            1,
        ),
        smoothness=ANALYTIC,
        anchor=np.array([1.0, 0.0, 0.0]),
    )


def _overparam_regression(m=6, n=3, seed=0, curvature=0.1):
    m, n = int(m), int(n)
    # curvature scales the quadratic part of F; it sets how strongly S bends
    if n < 1 or m <= n:
        raise InvalidInput("overparam_regression needs m > n >= 1")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, m))
    G = rng.standard_normal((n, m, m))
    Q = curvature * (G + G.transpose(0, 2, 1)) / np.sqrt(m)
    x_star = rng.standard_normal(m) / np.sqrt(m)

    def F(x):
        return A @ x + 0.5 * np.einsum("i,kij,j->k", x, Q, x)

    b = F(x_star)

    def jac(x):
        return A + Q @ x

    def cost(x):
        r = F(x) - b
        return 0.5 * float(r @ r)

    def egrad(x):
        return jac(x).T @ (F(x) - b)

    def ehess(x):
        J = jac(x)
        r = F(x) - b
        H = J.T @ J + np.einsum("k,kij->ij", r, Q)
        return 0.5 * (H + H.T)

    def project(x, tol=1e-13, max_iter=100):
        # Gauss-Newton onto the fiber, then Newton on the projection KKT system
        y = np.array(x, dtype=float)
        for _ in range(max_iter):
            r = F(y) - b
            if np.linalg.norm(r) <= tol:
                break
            y = y - np.linalg.lstsq(jac(y), r, rcond=None)[0]
        J = jac(y)
        lam = -np.linalg.lstsq(J.T, y - x, rcond=None)[0]
        for _ in range(max_iter):
            J = jac(y)
            r1 = (y - x) + J.T @ lam
            r2 = F(y) - b
            if np.linalg.norm(r1) + np.linalg.norm(r2) <= tol:
                break
            K = np.block(
                [[np.eye(m) + np.einsum("k,kij->ij", lam, Q), J.T], [J, np.zeros((n, n))]]
            )
            step = np.linalg.solve(K, -np.concatenate([r1, r2]))
            y = y + step[:m]
            lam = lam + step[m:]
        return y

    return dict(
        manifold=Euclidean(m),
        cost=cost,
        egrad=egrad,
        ehess=ehess,
        oracle=SolutionSetOracle(
            0.0,
            lambda x: float(np.linalg.norm(project(x) - x)),
            project,
            m - n,
            n,
            numerical=True,
        ),
        smoothness=ANALYTIC,
        anchor=x_star,
    )


def _burer_monteiro(p=3, r=2, seed=0):
    p, r = int(p), int(r)
    if not 1 <= r <= p:
        raise InvalidInput("burer_monteiro needs 1 <= r <= p")
    rng = np.random.default_rng(seed)
    Ys = rng.standard_normal((p, r))
    M = Ys @ Ys.T
    N = p * r

    def cost(y):
        Y = y.reshape(p, r)
        D = Y @ Y.T - M
        return 0.5 * float(np.sum(D * D))

    def egrad(y):
        Y = y.reshape(p, r)
        return (2 * (Y @ Y.T - M) @ Y).ravel()

    def ehess(y):
        Y = y.reshape(p, r)
        D = Y @ Y.T - M
        H = np.empty((N, N))
        for j in range(N):
            V = np.zeros(N)
            V[j] = 1.0
            V = V.reshape(p, r)
            H[:, j] = (2 * (V @ Y.T + Y @ V.T) @ Y + 2 * D @ V).ravel()
        return 0.5 * (H + H.T)

    def project(y):
        Y = y.reshape(p, r)
        U, _, Vt = np.linalg.svd(Ys.T @ Y)
        return (Ys @ (U @ Vt)).ravel()

    return dict(
        manifold=Euclidean(N),
        cost=cost,
        egrad=egrad,
        ehess=ehess,
        oracle=SolutionSetOracle(
            0.0,
            lambda y: float(np.linalg.norm(project(y) - y)),
            project,
            r * (r - 1) // 2,
            N - r * (r - 1) // 2,
        ),
        smoothness=ANALYTIC,
        anchor=Ys.ravel(),
    )


_CATALOG = {
    "quartic1d": (_quartic1d, ()),
    "quadratic": (_quadratic, ("diag",)),
    "newton_trap": (_newton_trap, ()),
    "circle": (_circle, ()),
    "aniso_quad": (_aniso_quad, ("a", "b")),
    "cross_c1": (_cross_c1, ()),
    "qg_not_eb": (_qg_not_eb, ()),
    "sphere_band": (_sphere_band, ()),
    "overparam_regression": (_overparam_regression, ("m", "n", "seed", "curvature")),
    "burer_monteiro": (_burer_monteiro, ("p", "r", "seed")),
}

PROBLEM_NAMES = tuple(_CATALOG)
SEEDED = ("overparam_regression", "burer_monteiro")


def build_problem(spec: ProblemSpec | str, **params) -> Problem:
    """Instantiate a catalog problem.

    >>> build_problem("aniso_quad", a=2, b=8).f([5.0, 1.0, 1.0])
    5.0
    """
    if isinstance(spec, str):
        seed = params.pop("seed", 0)
        spec = ProblemSpec(spec, dict(params), int(seed))
    if spec.name not in _CATALOG:
        raise InvalidInput(f"unknown problem {spec.name!r}")
    factory, allowed = _CATALOG[spec.name]
    kwargs = dict(spec.params)
    unknown = set(kwargs) - set(allowed)
    if unknown:
        raise InvalidInput(f"unexpected parameters for {spec.name}: {sorted(unknown)}")
    if "seed" in allowed:
        kwargs.setdefault("seed", spec.seed)
    try:
        parts = factory(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInput):
            raise
        raise InvalidInput(f"bad parameters for {spec.name}: {exc}") from exc
    return Problem(name=spec.name, spec=spec, **parts)


def start_near_S(p: Problem, distance: float, rng: np.random.Generator, x_bar=None):
    """A point reached from ``x_bar`` (default: the anchor) along a random
    direction in the range of the Hessian at ``x_bar``.

    For Morse-Bott problems that range is the normal space of S, so the
    returned point sits at roughly ``distance`` from S.
    """
    x_bar = p.anchor if x_bar is None else np.asarray(x_bar, dtype=float)
    if p.is_c2:
        B, H = p.hess_tangent(x_bar)
        w, V = np.linalg.eigh(H)
        keep = np.abs(w) > RANK_TOL * max(1.0, np.abs(w).max())
        normal = B @ V[:, keep]
    else:
        normal = p.manifold.tangent_basis(x_bar)
    if normal.shape[1] == 0:
        normal = p.manifold.tangent_basis(x_bar)
    v = normal @ rng.standard_normal(normal.shape[1])
    v *= distance / np.linalg.norm(v)
    return p.manifold.exp_map(x_bar, v)
