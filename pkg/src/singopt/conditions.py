"""Sampled estimates of landscape constants near a set of minimizers.

The PL, EB and QG estimators return the infimum of the defining ratio over
seeded uniform samples of an annulus; :func:`fit_loja_exponent` regresses
log-gradient on log-gap; :func:`check_mb` inspects Hessian spectra on S.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyRegion, IllConditionedFit, IncompleteInput, InvalidInput, PreconditionError
from .problems import Problem, numerical_rank

PL, EB, QG, LOJA = "PL", "EB", "QG", "Loja"


@dataclass(frozen=True)
class RegionSpec:
    center: np.ndarray
    r_outer: float
    r_inner: float = 0.0
    n_samples: int = 2000
    seed: int = 0
    eps_f: float = 1e-14

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not 0 <= self.r_inner < self.r_outer:
            raise InvalidInput("need 0 <= r_inner < r_outer")
        if self.n_samples < 100:
            raise InvalidInput("n_samples must be at least 100")

    def scaled(self, factor: float) -> "RegionSpec":
        return RegionSpec(
            self.center, self.r_outer * factor, self.r_inner * factor,
            self.n_samples, self.seed, self.eps_f,
        )


@dataclass(frozen=True)
class ConditionEstimate:
    kind: str
    mu_hat: float
    theta_hat: float | None = None
    argmin_sample: np.ndarray | None = None
    n_used: int = 0
    r_outer: float = float("nan")


@dataclass(frozen=True)
class MBReport:
    anchor: np.ndarray
    eigenvalues: list
    numerical_rank_d: int
    mu_mb: float
    kernel_dim: int
    rank_constant_along_S: bool
    tangent_alignment_err: float
    kernel_matches_dim_S: bool | None = None
    probe_ranks: list = field(default_factory=list)

    @property
    def is_morse_bott(self) -> bool:
        return bool(
            self.rank_constant_along_S
            and self.mu_mb > 0
            and self.kernel_matches_dim_S is not False
            and not self.tangent_alignment_err > 1e-4
        )


def sample_region(p: Problem, region: RegionSpec) -> list[np.ndarray]:
    """Seeded uniform samples of the geodesic annulus r_inner <= r <= r_outer."""
    M = p.manifold
    c = M.check_point(region.center)
    B = M.tangent_basis(c)
    k = B.shape[1]
    rng = np.random.default_rng(region.seed)
    u = rng.standard_normal((region.n_samples, k))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    lo, hi = region.r_inner**k, region.r_outer**k
    r = (lo + rng.uniform(size=region.n_samples) * (hi - lo)) ** (1.0 / k)
    V = (u * r[:, None]) @ B.T
    return [M.exp_map(c, v) for v in V]


@dataclass(frozen=True)
class SampleSet:
    """Cost gap, gradient norm and distance to S at every region sample."""

    xs: list
    gap: np.ndarray
    gn: np.ndarray
    dist: np.ndarray


def evaluate_region(p: Problem, region: RegionSpec) -> SampleSet:
    if p.oracle is None:
        raise IncompleteInput(f"{p.name} has no solution-set oracle")
    xs = sample_region(p, region)
    gap = np.array([p.f(x) for x in xs]) - p.f_star
    gn = np.array([np.linalg.norm(p.grad(x)) for x in xs])
    dist = np.array([p.dist_to_S(x) for x in xs])
    return SampleSet(xs, gap, gn, dist)


def _infimum(kind, ss, ratio, valid, region):
    idx = np.flatnonzero(valid & np.isfinite(ratio))
    if idx.size == 0:
        raise EmptyRegion(f"no valid samples for the {kind} estimate")
    j = idx[np.argmin(ratio[idx])]
    return ConditionEstimate(kind, float(ratio[j]), None, ss.xs[j].copy(), int(idx.size), region.r_outer)


def estimate_pl(p: Problem, region: RegionSpec, samples: SampleSet | None = None) -> ConditionEstimate:
    ss = samples or evaluate_region(p, region)
    valid = ss.gap >= region.eps_f
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = ss.gn**2 / (2 * ss.gap)
    return _infimum(PL, ss, ratio, valid, region)


def estimate_eb(p: Problem, region: RegionSpec, samples: SampleSet | None = None) -> ConditionEstimate:
    ss = samples or evaluate_region(p, region)
    valid = ss.dist >= np.sqrt(region.eps_f)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = ss.gn / ss.dist
    return _infimum(EB, ss, ratio, valid, region)


def estimate_qg(p: Problem, region: RegionSpec, samples: SampleSet | None = None) -> ConditionEstimate:
    ss = samples or evaluate_region(p, region)
    valid = (ss.dist >= np.sqrt(region.eps_f)) & (ss.gap >= region.eps_f)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 2 * ss.gap / ss.dist**2
    return _infimum(QG, ss, ratio, valid, region)


def fit_loja_exponent(p: Problem, region: RegionSpec, samples: SampleSet | None = None) -> ConditionEstimate:
    """Fit log|grad f| = theta log(f - f*) + 0.5 log(2 mu) by least squares."""
    ss = samples or evaluate_region(p, region)
    xs, gap, gn = ss.xs, ss.gap, ss.gn
    valid = (gap >= region.eps_f) & (gn > 0)
    if valid.sum() < 2:
        raise EmptyRegion("not enough samples for the exponent fit")
    lg = np.log(gap[valid])
    if np.ptp(lg) < 1e-8:
        raise IllConditionedFit("all samples lie on one level set")
    A = np.column_stack([lg, np.ones_like(lg)])
    (theta, b), *_ = np.linalg.lstsq(A, np.log(gn[valid]), rcond=None)
    theta = float(np.clip(theta, 0.0, np.nextafter(1.0, 0.0)))
    mu = 0.5 * float(np.exp(2 * b))
    j = int(np.flatnonzero(valid)[0])
    return ConditionEstimate(LOJA, mu, theta, xs[j].copy(), int(valid.sum()), region.r_outer)


def _subspace_angle(U: np.ndarray, W: np.ndarray) -> float:
    """Largest principal angle between column spaces of orthonormal U and W."""
    if U.shape[1] != W.shape[1]:
        return float("nan")
    if U.shape[1] == 0:
        return 0.0
    s = np.linalg.svd(U.T @ W, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))


def _tangent_of_S(p: Problem, x, B, h=1e-6):
    """Orthonormal basis (tangent coordinates) of T_x S from the projection Jacobian."""
    M = p.manifold
    cols = []
    for i in range(B.shape[1]):
        e = h * B[:, i]
        plus = p.oracle.project_to_S(M.retract(x, e))
        minus = p.oracle.project_to_S(M.retract(x, -e))
        cols.append(B.T @ (plus - minus) / (2 * h))
    J = np.array(cols).T
    U, sv, _ = np.linalg.svd(J)
    return U[:, : p.oracle.dim_S]


def check_mb(
    p: Problem, anchor, n_probe: int = 8, probe_radius: float = 0.1, seed: int = 0
) -> MBReport:
    """Hessian structure at ``anchor`` and at nearby points of S."""
    if not p.is_c2:
        raise PreconditionError(f"{p.name} is not C2")
    anchor = p.manifold.check_point(anchor)
    if p.oracle is None or p.dist_to_S(anchor) > 1e-8:
        raise PreconditionError("anchor must lie on S")
    B, H = p.hess_tangent(anchor)
    w, V = np.linalg.eigh(H)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    d = numerical_rank(w)
    mu_mb = float(w[d - 1]) if d > 0 else float("nan")
    kernel_dim = w.size - d

    rng = np.random.default_rng(seed)
    probes = p.oracle.sample_near(p.manifold, rng, anchor, probe_radius, n_probe)
    probe_ranks = [numerical_rank(np.linalg.eigvalsh(p.hess_tangent(y)[1])) for y in probes]
    constant = all(r == d for r in probe_ranks)

    matches = None
    align = float("nan")
    if p.oracle.is_submanifold:
        matches = kernel_dim == p.oracle.dim_S
        if matches:
            align = _subspace_angle(V[:, d:], _tangent_of_S(p, anchor, B))
    return MBReport(
        anchor=anchor.copy(),
        eigenvalues=[float(v) for v in w],
        numerical_rank_d=d,
        mu_mb=mu_mb,
        kernel_dim=kernel_dim,
        rank_constant_along_S=constant,
        tangent_alignment_err=align,
        kernel_matches_dim_S=matches,
        probe_ranks=probe_ranks,
    )


# implication edges: (name, premise, conclusion); the check is
# mu_hat[conclusion] >= slack * mu_hat[premise]
EDGES = (
    ("MB=>QG", "MB", QG),
    ("QG=>EB", QG, EB),
    ("EB=>PL", EB, PL),
    ("PL=>QG", PL, QG),
    ("PL=>MB", PL, "MB"),
    ("PL=>EB", PL, EB),
    ("QG=>MB", QG, "MB"),
)


@dataclass(frozen=True)
class EdgeVerdict:
    edge: str
    premise_mu: float
    conclusion_mu: float
    passed: bool | None


@dataclass(frozen=True)
class ImplicationReport:
    edges: list
    slack: float
    counterexample: bool
    c1_context: bool

    def verdict(self, edge: str) -> bool | None:
        for e in self.edges:
            if e.edge == edge:
                return e.passed
        raise KeyError(edge)

    @property
    def all_passed(self) -> bool:
        return all(e.passed is not False for e in self.edges)


def verify_implications(
    estimates, mb: MBReport | None = None, slack: float = 0.9
) -> ImplicationReport:
    """Check every implication edge at the given multiplicative slack.

    Without an MB report (C1 problems) the MB edges are skipped and any failing
    edge marks the problem as a C1 counterexample.
    """
    if not 0 < slack <= 1:
        raise InvalidInput("slack must lie in (0, 1]")
    mu = {}
    for est in estimates:
        mu[est.kind] = est.mu_hat
    missing = {PL, EB, QG} - set(mu)
    if missing:
        raise IncompleteInput(f"missing estimates: {sorted(missing)}")
    if mb is not None:
        mu["MB"] = mb.mu_mb
    out = []
    for name, a, b in EDGES:
        if a not in mu or b not in mu:
            out.append(EdgeVerdict(name, float("nan"), float("nan"), None))
            continue
        out.append(EdgeVerdict(name, mu[a], mu[b], bool(mu[b] >= slack * mu[a])))
    failed = any(e.passed is False for e in out)
    return ImplicationReport(out, slack, failed, mb is None)


def estimate_all(p: Problem, region: RegionSpec) -> dict:
    """PL, EB, QG estimates plus the exponent fit over one region."""
    ss = evaluate_region(p, region)
    out = {
        PL: estimate_pl(p, region, ss),
        EB: estimate_eb(p, region, ss),
        QG: estimate_qg(p, region, ss),
    }
    try:
        out[LOJA] = fit_loja_exponent(p, region, ss)
    except (EmptyRegion, IllConditionedFit):
        pass
    return out


def shrink_study(p: Problem, region: RegionSpec, levels: int = 3, factor: float = 0.1):
    """mu_hat for PL, EB and QG on nested annuli scaled by ``factor`` per level."""
    table = {PL: [], EB: [], QG: []}
    for i in range(levels):
        reg = region.scaled(factor**i)
        est = estimate_all(p, reg)
        for kind in table:
            table[kind].append(est[kind].mu_hat)
    return table
