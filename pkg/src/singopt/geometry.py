"""Euclidean space and the unit sphere.

Points and tangent vectors are plain 1-D float arrays in ambient coordinates.
A manifold object carries the geometry (metric, exponential, logarithm,
retraction, parallel transport, distance) and is immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import DomainError, InvalidInput

EXPONENTIAL = "exponential"
METRIC_PROJECTION = "metric-projection"
_RETRACTIONS = (EXPONENTIAL, METRIC_PROJECTION)

# log/transport on the sphere need dist(x, y) < pi
_ANTIPODAL_MARGIN = 1e-10


def _as_vector(a, n: int, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.shape[0] != n:
        raise InvalidInput(f"{what} must have shape ({n},), got {a.shape}")
    return a


@dataclass(frozen=True)
class Euclidean:
    n: int
    retraction_kind: str = EXPONENTIAL

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInput("Euclidean dimension must be positive")
        if self.retraction_kind not in _RETRACTIONS:
            raise InvalidInput(f"unknown retraction {self.retraction_kind!r}")

    kind = "euclidean"

    @property
    def ambient_dim(self) -> int:
        return self.n

    @property
    def dim(self) -> int:
        return self.n

    @property
    def c_r(self) -> float:
        return 1.0

    def check_point(self, x) -> np.ndarray:
        return _as_vector(x, self.n, "point")

    def inner(self, x, u, v) -> float:
        return float(np.dot(u, v))

    def norm(self, x, v) -> float:
        return float(np.linalg.norm(v))

    def proj(self, x, u) -> np.ndarray:
        return np.asarray(u, dtype=float)

    def tangent_basis(self, x) -> np.ndarray:
        return np.eye(self.n)

    def dist(self, x, y) -> float:
        x = self.check_point(x)
        y = self.check_point(y)
        return float(np.linalg.norm(x - y))

    def exp_map(self, x, v) -> np.ndarray:
        return self.check_point(x) + _as_vector(v, self.n, "tangent")

    def log_map(self, x, y) -> np.ndarray:
        return self.check_point(y) - self.check_point(x)

    def retract(self, x, v) -> np.ndarray:
        # both retraction kinds coincide with x + v in flat space
        return self.exp_map(x, v)

    def transport(self, x, y, v) -> np.ndarray:
        self.check_point(x)
        self.check_point(y)
        return _as_vector(v, self.n, "tangent").copy()

    def egrad_to_rgrad(self, x, egrad):
        return egrad

    def ehess_to_rhess(self, x, egrad, ehess):
        return ehess

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.n)

    def random_tangent(self, rng: np.random.Generator, x) -> np.ndarray:
        return rng.standard_normal(self.n)


@dataclass(frozen=True)
class UnitSphere:
    """Unit sphere {x in R^n : |x| = 1}; ``n`` is the ambient dimension."""

    n: int
    retraction_kind: str = METRIC_PROJECTION

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInput("sphere needs ambient dimension >= 2")
        if self.retraction_kind not in _RETRACTIONS:
            raise InvalidInput(f"unknown retraction {self.retraction_kind!r}")

    kind = "sphere"

    @property
    def ambient_dim(self) -> int:
        return self.n

    @property
    def dim(self) -> int:
        return self.n - 1

    @property
    def c_r(self) -> float:
        # metric projection moves the point by arctan|v| <= |v|
        return 1.0

    def check_point(self, x) -> np.ndarray:
        x = _as_vector(x, self.n, "point")
        if abs(np.linalg.norm(x) - 1.0) > 1e-12:
            raise InvalidInput("point is not on the unit sphere")
        return x

    def inner(self, x, u, v) -> float:
        return float(np.dot(u, v))

    def norm(self, x, v) -> float:
        return float(np.linalg.norm(v))

    def proj(self, x, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u - np.dot(x, u) * x

    def tangent_basis(self, x) -> np.ndarray:
        """Orthonormal basis of the tangent space, as columns (n x n-1)."""
        return null_space(np.asarray(x, dtype=float)[None, :])

    def dist(self, x, y) -> float:
        x = self.check_point(x)
        y = self.check_point(y)
        # atan2 form keeps full relative accuracy for nearby points
        return float(2.0 * np.arctan2(np.linalg.norm(x - y), np.linalg.norm(x + y)))

    def exp_map(self, x, v) -> np.ndarray:
        x = self.check_point(x)
        v = _as_vector(v, self.n, "tangent")
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return x.copy()
        y = np.cos(nv) * x + np.sin(nv) * (v / nv)
        return y / np.linalg.norm(y)

    def log_map(self, x, y) -> np.ndarray:
        x = self.check_point(x)
        y = self.check_point(y)
        theta = self.dist(x, y)
        if theta >= np.pi - _ANTIPODAL_MARGIN:
            raise DomainError("logarithm undefined for antipodal points")
        w = y - np.dot(x, y) * x
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return np.zeros(self.n)
        return theta * w / nw

    def retract(self, x, v) -> np.ndarray:
        if self.retraction_kind == EXPONENTIAL:
            return self.exp_map(x, v)
        x = self.check_point(x)
        y = x + _as_vector(v, self.n, "tangent")
        return y / np.linalg.norm(y)

    def transport(self, x, y, v) -> np.ndarray:
        """Parallel transport along the minimizing geodesic from x to y."""
        v = _as_vector(v, self.n, "tangent")
        w = self.log_map(x, y)
        theta = np.linalg.norm(w)
        if theta == 0.0:
            return v.copy()
        u = w / theta
        x = np.asarray(x, dtype=float)
        return v - np.dot(u, v) * ((1.0 - np.cos(theta)) * u + np.sin(theta) * x)

    def egrad_to_rgrad(self, x, egrad):
        return self.proj(x, egrad)

    def ehess_to_rhess(self, x, egrad, ehess):
        """Riemannian Hessian matrix in ambient coordinates: P ehess P - <x, egrad> P."""
        P = np.eye(self.n) - np.outer(x, x)
        H = P @ ehess @ P - np.dot(x, egrad) * P
        return 0.5 * (H + H.T)

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        x = rng.standard_normal(self.n)
        return x / np.linalg.norm(x)

    def random_tangent(self, rng: np.random.Generator, x) -> np.ndarray:
        return self.proj(x, rng.standard_normal(self.n))


Manifold = Euclidean | UnitSphere


def make_manifold(kind: str, n: int, retraction: str | None = None):
    """Build a manifold from a descriptor (``"euclidean"`` or ``"sphere"``)."""
    if kind == "euclidean":
        return Euclidean(n, retraction or EXPONENTIAL)
    if kind == "sphere":
        return UnitSphere(n, retraction or METRIC_PROJECTION)
    raise InvalidInput(f"unknown manifold kind {kind!r}")
