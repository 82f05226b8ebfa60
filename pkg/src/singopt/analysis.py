"""Post-hoc analysis of solver traces: convergence order, sufficient and strong
decrease constants, path length, and linear-rate verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IncompleteInput, InsufficientData, InvalidInput, NotApplicable
from .solvers import GRAD_TOL, Trace

EPS = np.finfo(float).eps
FLOOR = 1e2 * EPS
DEFAULT_TAIL = 6

SUBLINEAR, LINEAR, SUPERLINEAR, QUADRATIC = "sublinear", "linear", "superlinear", "quadratic"


@dataclass(frozen=True)
class RateReport:
    order_q: float
    rate_c: float
    window: tuple
    fit_residual: float
    classification: str


def classify(q: float, c: float) -> str:
    if q >= 1.8:
        return QUADRATIC
    if q > 1.1:
        return SUPERLINEAR
    if 0.9 <= q <= 1.1 and c < 1 - 1e-3:
        return LINEAR
    return SUBLINEAR


def fit_rate(errors, tail: int = DEFAULT_TAIL) -> RateReport:
    """Fit ``log e[k+1] = q log e[k] + log c`` on the last usable entries.

    The sequence is cut at the first entry at or below ``1e2 * eps``. When the
    fitted order is within [0.9, 1.1] the reported constant is the geometric
    mean of consecutive ratios (the fit with q pinned to 1), which separates
    slow linear from sublinear sequences far better than the free intercept.

    >>> fit_rate([0.5**k for k in range(10)]).classification
    'linear'
    """
    e = np.asarray(errors, dtype=float).ravel()
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise InvalidInput("errors must be finite and nonnegative")
    if tail < 4:
        raise InvalidInput("tail must be at least 4")
    below = np.flatnonzero(e <= FLOOR)
    stop = int(below[0]) if below.size else e.size
    if stop < 4:
        raise InsufficientData(f"only {stop} usable entries; need at least 4")
    start = max(0, stop - tail)
    w = np.log(e[start:stop])
    x, y = w[:-1], w[1:]
    A = np.column_stack([x, np.ones_like(x)])
    (q, logc), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([q, logc]) - y) ** 2)))
    q = float(q)
    c = float(np.exp(logc))
    if 0.9 <= q <= 1.1:
        c = float(np.exp(np.mean(y - x)))
    return RateReport(q, c, (start, stop), resid, classify(q, c))


def trace_sequence(trace: Trace, name: str = "dist_S") -> np.ndarray:
    """Values of ``name`` at the distinct iterates of a trace."""
    return np.array([getattr(r, name) for r in trace.distinct()], dtype=float)


def rate_of(trace: Trace, name: str = "dist_S", tail: int = DEFAULT_TAIL) -> RateReport:
    return fit_rate(trace_sequence(trace, name), tail)


@dataclass(frozen=True)
class DecreaseReport:
    omega_hat: float
    sigma_hat: float
    path_length: float
    bpl_bound: float
    violations: int
    n_steps: int
    displacement: float


def _step_distance(trace: Trace, a, b) -> float:
    if a.x is None or b.x is None:
        raise IncompleteInput("trace has no recorded points")
    return float(trace.manifold.dist(a.x, b.x))


def measure_decrease(
    trace: Trace,
    theta: float = 0.5,
    mu: float | None = None,
    f_star: float = 0.0,
    grad_tol: float | None = None,
) -> DecreaseReport:
    """Sufficient- and strong-decrease constants plus path length of a trace.

    ``bpl_bound`` is the path-length bound implied by strong decrease with
    constant ``sigma_hat`` and a Lojasiewicz inequality ``(theta, mu)``
    evaluated at the first iterate; it is ``nan`` when ``mu`` is not given.
    """
    if not trace.records:
        raise IncompleteInput("empty trace")
    if not 0 <= theta < 1:
        raise InvalidInput("theta must lie in [0, 1)")
    tol = trace.grad_tol if grad_tol is None else grad_tol
    recs = trace.records
    omegas, sigmas = [], []
    path = 0.0
    violations = 0
    steps = 0
    for a, b in zip(recs, recs[1:]):
        if not a.accepted:
            continue
        steps += 1
        dist = _step_distance(trace, a, b)
        path += dist
        drop = a.f - b.f
        if drop < 0:
            violations += 1
        if a.grad_norm > tol and dist > 0:
            omegas.append(drop / a.grad_norm**2)
            sigmas.append(drop / (a.grad_norm * dist))
    omega = min(omegas) if omegas else float("nan")
    sigma = min(sigmas) if sigmas else float("nan")
    if mu is None or not np.isfinite(sigma):
        bound = float("nan")
    elif sigma <= 0:
        bound = float("inf")
    else:
        gap = max(recs[0].f - f_star, 0.0)
        bound = gap ** (1 - theta) / (sigma * (1 - theta) * np.sqrt(2 * mu))
    first, last = recs[0], recs[-1]
    disp = _step_distance(trace, first, last) if first.x is not None else float("nan")
    return DecreaseReport(omega, sigma, path, float(bound), violations, steps, disp)


@dataclass(frozen=True)
class LinearRateReport:
    passed: bool
    f_ratio: float
    dist_ratio: float
    f_ratio_mean: float
    dist_ratio_mean: float
    f_bound: float
    dist_bound: float


def _tail_ratios(v: np.ndarray, floor: float, tail: int):
    ok = np.flatnonzero(v > floor)
    stop = ok[-1] + 1 if ok.size else 0
    # contiguous usable prefix only
    bad = np.flatnonzero(v[:stop] <= floor)
    stop = int(bad[0]) if bad.size else stop
    seg = v[max(0, stop - tail - 1) : stop]
    return seg[1:] / seg[:-1]


def verify_linear_rate(
    trace: Trace, mu: float, omega: float, f_star: float = 0.0, slack: float = 0.02, tail: int = DEFAULT_TAIL
) -> LinearRateReport:
    """Compare tail per-step ratios with ``1 - 2 omega mu`` (f-gap) and its root (distance)."""
    if trace.termination != GRAD_TOL or len(trace.records) < 3:
        raise NotApplicable("trace did not converge or is too short")
    rate = 1.0 - 2.0 * omega * mu
    if not 0 <= rate < 1:
        raise InvalidInput("need 0 < 2 omega mu <= 1")
    gaps = trace_sequence(trace, "f") - f_star
    dists = trace_sequence(trace, "dist_S")
    fr = _tail_ratios(gaps, 0.0, tail)
    dr = _tail_ratios(dists, FLOOR, tail)
    if fr.size == 0 or dr.size == 0:
        raise NotApplicable("not enough usable tail entries")
    f_bound = rate + slack
    d_bound = float(np.sqrt(rate)) + slack
    f_max, d_max = float(fr.max()), float(dr.max())
    return LinearRateReport(
        passed=f_max <= f_bound and d_max <= d_bound,
        f_ratio=f_max,
        dist_ratio=d_max,
        f_ratio_mean=float(np.exp(np.mean(np.log(fr)))),
        dist_ratio_mean=float(np.exp(np.mean(np.log(dr)))),
        f_bound=f_bound,
        dist_bound=d_bound,
    )
