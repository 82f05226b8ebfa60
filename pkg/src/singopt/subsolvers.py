"""Inner solvers for second-order models.

All routines work on a :class:`ModelData` pair ``(g, H)`` expressed in an
orthonormal coordinate system of the tangent space, so they are agnostic to
the manifold. The quadratic model is ``q(s) = <g, s> + 0.5 <s, H s>`` and the
cubic model adds ``sigma/3 |s|^3``; both are reported relative to the value at
``s = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, SubsolverStall

EXACT_SECULAR = "exact_secular"
INEXACT_GRADIENT = "inexact_gradient"
CUBIC_MODES = (EXACT_SECULAR, INEXACT_GRADIENT)

# |g~| on the lambda_min eigenspace below this fraction of |g| counts as zero
HARD_CASE_TOL = 1e-12
SECULAR_RTOL = 1e-12
MAX_INEXACT_ITERS = 10_000
_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class ModelData:
    g: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(-1)
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if H.shape != (g.size, g.size):
            raise InvalidInput(f"H has shape {H.shape}, expected {(g.size, g.size)}")
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(H)):
            raise InvalidInput("model data must be finite")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(H), initial=0.0)):
            raise InvalidInput("H is not symmetric")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "H", 0.5 * (H + H.T))

    @property
    def dim(self) -> int:
        return self.g.size

    def quad(self, s) -> float:
        s = np.asarray(s, dtype=float)
        return float(self.g @ s + 0.5 * s @ (self.H @ s))

    def cubic(self, s, sigma: float) -> float:
        s = np.asarray(s, dtype=float)
        return self.quad(s) + sigma / 3.0 * float(np.linalg.norm(s)) ** 3

    def cubic_grad(self, s, sigma: float) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.g + self.H @ s + sigma * np.linalg.norm(s) * s


@dataclass(frozen=True)
class TrsSolution:
    s: np.ndarray
    lam: float
    on_boundary: bool
    hard_case: bool
    model_value: float


@dataclass(frozen=True)
class CubicSolution:
    s: np.ndarray
    model_value: float
    model_grad_norm: float
    inner_iters: int
    mode: str
    nu: float = float("nan")
    hard_case: bool = False
    decrease_ok: bool = True
    gradient_ok: bool = True

    @property
    def certified(self) -> bool:
        return self.decrease_ok and self.gradient_ok


@dataclass(frozen=True)
class TcgInfo:
    s: np.ndarray
    iters: int
    stop: str
    model_values: list = field(default_factory=list)


def _canonical_sign(u: np.ndarray) -> np.ndarray:
    """Flip u so that its first non-negligible coordinate is positive."""
    big = np.flatnonzero(np.abs(u) > 1e-12 * np.max(np.abs(u)))
    return -u if big.size and u[big[0]] < 0 else u


def newton_step(md: ModelData, rank_tol: float = 1e-14) -> np.ndarray:
    """Pseudo-inverse Newton step ``-H^+ g`` with small eigenvalues truncated."""
    if rank_tol <= 0:
        raise InvalidInput("rank_tol must be positive")
    w, V = np.linalg.eigh(md.H)
    scale = np.max(np.abs(w), initial=0.0)
    if scale == 0.0:
        return np.zeros(md.dim)
    keep = np.abs(w) > rank_tol * scale
    gt = V[:, keep].T @ md.g
    return -V[:, keep] @ (gt / w[keep])


def cauchy_step(md: ModelData, delta: float) -> np.ndarray:
    """Minimizer of the quadratic model along -g inside the ball of radius delta."""
    if delta <= 0:
        raise InvalidInput("trust-region radius must be positive")
    gn = np.linalg.norm(md.g)
    if gn == 0.0:
        return np.zeros(md.dim)
    curv = float(md.g @ (md.H @ md.g))
    t = delta / gn
    if curv > 0:
        t = min(gn * gn / curv, t)
    return -t * md.g


def _eig_model(md: ModelData):
    w, V = np.linalg.eigh(md.H)
    gt = V.T @ md.g
    gn = float(np.linalg.norm(md.g))
    spread = max(1.0, float(np.max(np.abs(w), initial=0.0)))
    # eigenvalues within this gap of lambda_min form the bottom eigenspace
    bottom = w <= w[0] + 1e-12 * spread
    g_bottom = float(np.linalg.norm(gt[bottom]))
    return w, V, gt, gn, bottom, g_bottom


def _shifted_norm(w, gt, lam, mask):
    """|(W + lam I)^{-1} g~| restricted to ``mask`` and its lam-derivative term."""
    d = w[mask] + lam
    q = gt[mask] / d
    return float(np.linalg.norm(q)), float(np.sum(q * q / d))


def _safeguarded_root(phi, lo: float, hi: float, x0: float, ftol: float = 0.0, max_iter: int = 200):
    """Newton with bisection fallback for an increasing function on (lo, hi].

    Stops when |phi| <= ftol or the bracket reaches floating resolution.
    """
    x = x0
    for _ in range(max_iter):
        val, der = phi(x)
        if abs(val) <= ftol:
            return x
        if val > 0:
            hi = x
        else:
            lo = x
        if hi - lo <= 2 * _EPS * max(abs(lo), abs(hi), np.finfo(float).tiny):
            break
        x_new = x - val / der if der > 0 else np.nan
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        x = x_new
    return x


def solve_trs_exact(md: ModelData, delta: float, tol: float = SECULAR_RTOL) -> TrsSolution:
    """Global minimizer of the quadratic model over the ball |s| <= delta."""
    if delta <= 0:
        raise InvalidInput("trust-region radius must be positive")
    w, V, gt, gn, bottom, g_bottom = _eig_model(md)
    lam_min = float(w[0])
    nz = gt != 0.0

    def finish(st, lam, boundary, hard):
        s = V @ st
        return TrsSolution(s, float(lam), boundary, hard, md.quad(s))

    if gn == 0.0 and lam_min >= 0:
        return finish(np.zeros(md.dim), 0.0, False, False)

    # interior solution with lambda = 0
    if lam_min > 0:
        st = -gt / w
        if np.linalg.norm(st) <= delta:
            return finish(st, 0.0, False, False)
    elif lam_min >= -1e-14 * max(1.0, np.abs(w).max()) and g_bottom <= HARD_CASE_TOL * gn:
        keep = ~bottom
        st = np.zeros(md.dim)
        st[keep] = -gt[keep] / w[keep]
        if np.linalg.norm(st) <= delta:
            return finish(st, 0.0, False, False)

    lam_low = max(0.0, -lam_min)
    if g_bottom <= HARD_CASE_TOL * gn and lam_low > 0:
        keep = ~bottom
        st = np.zeros(md.dim)
        st[keep] = -gt[keep] / (w[keep] + lam_low)
        ns = np.linalg.norm(st)
        if ns <= delta:
            u = _canonical_sign(V[:, 0])
            tau = np.sqrt(max(delta * delta - ns * ns, 0.0))
            st = st + tau * (V.T @ u)
            return finish(st, lam_low, True, True)

    mask = nz & ~(bottom & (g_bottom <= HARD_CASE_TOL * gn))

    def phi(lam):
        ns, d = _shifted_norm(w, gt, lam, mask)
        return 1.0 / ns - 1.0 / delta, d / ns**3

    hi = lam_low + gn / delta
    # phi ~ (delta - |s|) / delta^2, so this asks |s| = delta to relative tol
    lam = _safeguarded_root(phi, lam_low, hi, hi, tol / delta)
    st = np.zeros(md.dim)
    st[mask] = -gt[mask] / (w[mask] + lam)
    # near the hard case |s| moves by ~1e-10 per ulp of lam; the component
    # with largest |s_i| / (w_i + lam) absorbs the mismatch at least cost
    # to (H + lam I)s + g
    idx = np.flatnonzero(mask)
    i = int(idx[np.argmax(np.abs(st[idx]) / (w[idx] + lam))])
    rest = float(np.sum(st * st) - st[i] ** 2)
    if rest <= delta * delta:
        st[i] = np.copysign(np.sqrt(delta * delta - rest), st[i])
    else:
        st *= delta / np.linalg.norm(st)
    return finish(st, lam, True, False)


def solve_trs_tcg(
    md: ModelData,
    delta: float,
    kappa_tcg: float = 0.1,
    theta_tcg: float = 1.0,
    max_iter: int | None = None,
    return_info: bool = False,
):
    """Truncated conjugate gradients on the quadratic model inside the ball."""
    if delta <= 0:
        raise InvalidInput("trust-region radius must be positive")
    n = md.dim
    max_iter = n if max_iter is None else max_iter
    s = np.zeros(n)
    gn = np.linalg.norm(md.g)
    values = [0.0]

    def done(s, j, stop):
        if return_info:
            return TcgInfo(s, j, stop, values)
        return s

    if gn == 0.0:
        return done(s, 0, "zero_gradient")
    r = md.g.copy()
    d = -r
    rr = float(r @ r)
    target = gn * min(kappa_tcg, gn**theta_tcg)
    for j in range(1, max_iter + 1):
        Hd = md.H @ d
        curv = float(d @ Hd)
        alpha = rr / curv if curv > 0 else np.inf
        if curv <= 0 or np.linalg.norm(s + alpha * d) >= delta:
            s = s + _to_boundary(s, d, delta) * d
            values.append(md.quad(s))
            return done(s, j, "negative_curvature" if curv <= 0 else "boundary")
        s = s + alpha * d
        values.append(md.quad(s))
        r = r + alpha * Hd
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= target:
            return done(s, j, "residual")
        d = -r + (rr_new / rr) * d
        rr = rr_new
    return done(s, max_iter, "max_iter")


def _to_boundary(s, d, delta):
    """Positive tau with |s + tau d| = delta (requires |s| <= delta)."""
    a = float(d @ d)
    b = 2.0 * float(s @ d)
    c = float(s @ s) - delta * delta
    disc = np.sqrt(max(b * b - 4 * a * c, 0.0))
    if b <= 0:
        return (-b + disc) / (2 * a)
    return -2 * c / (b + disc)


def arc_step_bound(g_norm: float, sigma: float, lam_min: float, beta_H: float = 0.0) -> float:
    """Upper bound on the norm of any step satisfying the cubic-model decrease."""
    return np.sqrt(3 * g_norm / sigma) + 1.5 / sigma * max(0.0, beta_H * g_norm - lam_min)


def _certify(md, s, sigma, kappa, mode, iters, nu=float("nan"), hard=False):
    mv = md.cubic(s, sigma)
    gnorm = float(np.linalg.norm(md.cubic_grad(s, sigma)))
    ns = float(np.linalg.norm(s))
    g_norm = float(np.linalg.norm(md.g))
    # the model gradient cannot be evaluated more accurately than this; it
    # matters only when kappa |s| |g| is itself at rounding level (g = 0)
    rounding = 8 * _EPS * (g_norm + float(np.linalg.norm(md.H)) * ns + sigma * ns * ns)
    bound = kappa * ns * g_norm + rounding
    return CubicSolution(
        s=s,
        model_value=mv,
        model_grad_norm=gnorm,
        inner_iters=iters,
        mode=mode,
        nu=float(nu),
        hard_case=hard,
        decrease_ok=mv <= 0.0,
        gradient_ok=gnorm <= bound,
    )


def _cubic_exact(md: ModelData, sigma: float, kappa: float) -> CubicSolution:
    w, V, gt, gn, bottom, g_bottom = _eig_model(md)
    lam_min = float(w[0])
    if gn == 0.0 and lam_min >= 0:
        return _certify(md, np.zeros(md.dim), sigma, kappa, EXACT_SECULAR, 0, 0.0)

    nu_low = max(0.0, -lam_min)
    hard_ok = g_bottom <= HARD_CASE_TOL * gn
    if hard_ok and nu_low > 0:
        keep = ~bottom
        st = np.zeros(md.dim)
        st[keep] = -gt[keep] / (w[keep] + nu_low)
        ns = np.linalg.norm(st)
        radius = nu_low / sigma
        if ns <= radius:
            u = _canonical_sign(V[:, 0])
            st = st + np.sqrt(max(radius * radius - ns * ns, 0.0)) * (V.T @ u)
            return _certify(md, V @ st, sigma, kappa, EXACT_SECULAR, 0, nu_low, True)

    mask = (gt != 0.0) & ~(bottom & hard_ok)

    def phi(nu):
        ns, d = _shifted_norm(w, gt, nu, mask)
        return 1.0 / ns - sigma / nu, d / ns**3 + sigma / nu**2

    hi = 0.5 * (-lam_min + np.sqrt(lam_min * lam_min + 4 * sigma * gn))
    hi = max(hi, nu_low * (1 + 1e-15) + 1e-300)
    nu = _safeguarded_root(phi, nu_low, hi, hi)
    st = np.zeros(md.dim)
    st[mask] = -gt[mask] / (w[mask] + nu)
    return _certify(md, V @ st, sigma, kappa, EXACT_SECULAR, 0, nu)


def _cubic_inexact(md: ModelData, sigma: float, kappa: float) -> CubicSolution:
    g = md.g
    gn = float(np.linalg.norm(g))
    n = md.dim
    if gn == 0.0:
        return _certify(md, np.zeros(n), sigma, kappa, INEXACT_GRADIENT, 0)
    # cubic Cauchy point: minimizer of the model along -g
    c = float(g @ (md.H @ g))
    alpha = (-c + np.sqrt(c * c + 4 * sigma * gn**5)) / (2 * sigma * gn**3)
    s = -alpha * g
    m = md.cubic(s, sigma)
    eye = np.eye(n)
    for it in range(1, MAX_INEXACT_ITERS + 1):
        grad = md.cubic_grad(s, sigma)
        gm = float(np.linalg.norm(grad))
        ns = float(np.linalg.norm(s))
        if gm <= kappa * ns * gn:
            return _certify(md, s, sigma, kappa, INEXACT_GRADIENT, it - 1)
        # Newton direction on the model Hessian with eigenvalues replaced by
        # their absolute values (floored), which keeps it a descent direction
        Hm = md.H + sigma * ns * eye + (sigma / ns) * np.outer(s, s)
        lam, U = np.linalg.eigh(Hm)
        floor = 1e-12 * max(1.0, float(np.abs(lam).max()))
        direction = -U @ ((U.T @ grad) / np.maximum(np.abs(lam), floor))
        slope = float(grad @ direction)
        t = 1.0
        while True:
            s_new = s + t * direction
            m_new = md.cubic(s_new, sigma)
            if m_new <= m + 1e-4 * t * slope or t < 1e-20:
                break
            t *= 0.5
        if m_new > m or np.array_equal(s_new, s):
            # rounding floor reached: nothing more can be gained
            return _certify(md, s, sigma, kappa, INEXACT_GRADIENT, it)
        s, m = s_new, m_new
    raise SubsolverStall(f"inexact cubic solver exceeded {MAX_INEXACT_ITERS} iterations")


def solve_cubic(
    md: ModelData, sigma: float, kappa: float = 0.1, mode: str = EXACT_SECULAR
) -> CubicSolution:
    """Minimize the cubic-regularized model, exactly or to the gradient tolerance."""
    if not sigma > 0:
        raise InvalidInput("sigma must be positive")
    if kappa < 0:
        raise InvalidInput("kappa must be nonnegative")
    if mode == EXACT_SECULAR:
        return _cubic_exact(md, sigma, kappa)
    if mode == INEXACT_GRADIENT:
        return _cubic_inexact(md, sigma, kappa)
    raise InvalidInput(f"unknown cubic mode {mode!r}")
