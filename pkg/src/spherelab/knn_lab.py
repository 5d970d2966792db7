"""k-NN regression bias on the circle, the 2-sphere and Euclidean space.

Points are always stored in ambient coordinates (``(n, 2)`` on the circle,
``(n, 3)`` on the 2-sphere, ``(n, m)`` in ``R^m``); gradients are ambient
tangent vectors, so ``<grad f, grad p>`` is a plain dot product.

The leading bias of the k-NN estimator at ``x`` is

    b(x) = r^2 / (2 (m + 2)) * (Lap f + 2 <grad f, grad p> / p),

with ``r = (k Gamma(1 + m/2) / (n p(x) pi^(m/2)))^(1/m)``, and its
integrated square is ``A(m, k, n) * int (Lap f + 2 <grad f, grad p>/p)^2
p^(1 - 4/m) dvol``.

Monte Carlo estimators come in two flavours.  ``"plain"`` averages the
estimator itself over replications.  ``"conditional"`` keeps the sampled
k-th neighbour distance ``rho`` but replaces the estimator by its
conditional mean given ``rho``: the ``k - 1`` inner neighbours are i.i.d.
from ``p`` restricted to the ball, the k-th one lies on its boundary with
density proportional to ``p``.  Both are unbiased for ``E[f_hat(x)]``; the
conditional one has far smaller variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.spatial import cKDTree
from scipy.special import gammaln, i0e, ndtr, roots_hermitenorm
from scipy.stats import beta as beta_dist

from spherelab.errors import DomainError, InvalidArgumentError
from spherelab.rng import substream
from spherelab.sphere import _vmf_rows

CIRCLE = "circle"
SPHERE2 = "sphere2"
EUCLIDEAN = "euclidean"

CIRCLE_GRID = 4096
SPHERE_GRID = 8192

# ball quadrature sizes for the conditional estimator
_BALL_RADIAL = 16
_BALL_ANGULAR = 32
_ARC_NODES = 32


# -- manifolds -----------------------------------------------------------------------


@dataclass(frozen=True)
class Manifold:
    """The circle S^1 in R^2, the 2-sphere in R^3, or ``R^m``."""

    kind: str
    m: int

    def __post_init__(self):
        expected = {CIRCLE: 1, SPHERE2: 2}
        if self.kind in expected and self.m != expected[self.kind]:
            raise InvalidArgumentError(f"{self.kind} has dimension {expected[self.kind]}")
        if self.kind not in (CIRCLE, SPHERE2, EUCLIDEAN):
            raise InvalidArgumentError(f"unknown manifold {self.kind!r}")
        if self.m < 1:
            raise InvalidArgumentError("manifold dimension must be >= 1")

    @classmethod
    def circle(cls) -> "Manifold":
        return cls(CIRCLE, 1)

    @classmethod
    def sphere2(cls) -> "Manifold":
        return cls(SPHERE2, 2)

    @classmethod
    def euclidean(cls, m: int) -> "Manifold":
        return cls(EUCLIDEAN, int(m))

    @property
    def ambient_dim(self) -> int:
        return {CIRCLE: 2, SPHERE2: 3}.get(self.kind, self.m)

    @property
    def compact(self) -> bool:
        return self.kind != EUCLIDEAN

    @property
    def volume(self) -> float:
        return {CIRCLE: 2.0 * np.pi, SPHERE2: 4.0 * np.pi}.get(self.kind, np.inf)

    @property
    def scalar_curvature(self) -> float:
        return 2.0 if self.kind == SPHERE2 else 0.0

    def chordal_to_geodesic(self, c):
        c = np.asarray(c, dtype=np.float64)
        if self.kind == EUCLIDEAN:
            return c
        return 2.0 * np.arcsin(np.clip(0.5 * c, 0.0, 1.0))

    def distance(self, X, y) -> np.ndarray:
        """Geodesic distance from every row of ``X`` to ``y``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).ravel()
        return self.chordal_to_geodesic(np.linalg.norm(X - y, axis=1))

    def grid(self, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic integration grid ``(points, weights)`` with weights summing to the volume."""
        if self.kind == CIRCLE:
            size = CIRCLE_GRID if size is None else int(size)
            theta = 2.0 * np.pi * (np.arange(size) + 0.5) / size - np.pi
            return angle_points(theta), np.full(size, 2.0 * np.pi / size)
        if self.kind == SPHERE2:
            size = SPHERE_GRID if size is None else int(size)
            return fibonacci_sphere(size), np.full(size, 4.0 * np.pi / size)
        raise DomainError("R^m is not compact; pass an explicit integration grid")


def angle_points(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def angles(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.arctan2(X[..., 1], X[..., 0])


def fibonacci_sphere(count: int) -> np.ndarray:
    """Fibonacci lattice on S^2 (equal-area, low discrepancy)."""
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    s = np.sqrt(1.0 - z**2)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


# -- densities -----------------------------------------------------------------------


@dataclass(frozen=True)
class Density:
    """Sampling density with analytic gradient and Laplacian.

    Use the constructors :meth:`uniform`, :meth:`vmf` and :meth:`gaussian`.
    """

    kind: str
    manifold: Manifold
    mean: tuple = ()
    kappa: float = 0.0
    cov: tuple = ()

    @classmethod
    def uniform(cls, manifold: Manifold) -> "Density":
        if not manifold.compact:
            raise InvalidArgumentError("no uniform density on R^m")
        return cls("uniform", manifold)

    @classmethod
    def vmf(cls, manifold: Manifold, mean, kappa: float) -> "Density":
        """von Mises-Fisher density; on the circle ``mean`` may be an angle."""
        if not manifold.compact:
            raise InvalidArgumentError("vMF densities live on the circle or the 2-sphere")
        if manifold.kind == CIRCLE and np.ndim(mean) == 0:
            mean = angle_points(float(mean))
        mu = np.asarray(mean, dtype=np.float64).ravel()
        if mu.size != manifold.ambient_dim or abs(np.linalg.norm(mu) - 1.0) > 1e-8:
            raise InvalidArgumentError("vMF mean must be a unit vector of the ambient space")
        if not (np.isfinite(kappa) and kappa >= 0):
            raise InvalidArgumentError("kappa must be finite and >= 0")
        return cls("vmf", manifold, tuple(mu), float(kappa))

    @classmethod
    def gaussian(cls, mean, cov) -> "Density":
        mu = np.asarray(mean, dtype=np.float64).ravel()
        S = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        if S.shape != (mu.size, mu.size):
            raise InvalidArgumentError("covariance shape does not match the mean")
        if not np.allclose(S, S.T) or np.any(np.linalg.eigvalsh(S) <= 0):
            raise InvalidArgumentError("covariance must be symmetric positive definite")
        return cls("gaussian", Manifold.euclidean(mu.size), tuple(mu), 0.0, tuple(map(tuple, S)))

    @property
    def name(self) -> str:
        if self.kind == "vmf":
            return f"vmf(kappa={self.kappa:g})"
        return self.kind

    # vMF normalizer folded with exp(-kappa) for stability
    def _vmf_scale(self) -> float:
        k = self.kappa
        if self.manifold.kind == CIRCLE:
            return 1.0 / (2.0 * np.pi * i0e(k))
        if k == 0.0:
            return 1.0 / (4.0 * np.pi)
        return k / (2.0 * np.pi * -np.expm1(-2.0 * k))

    def pdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "uniform":
            return np.full(X.shape[0], 1.0 / self.manifold.volume)
        if self.kind == "vmf":
            u = X @ np.asarray(self.mean)
            return self._vmf_scale() * np.exp(self.kappa * (u - 1.0))
        mu = np.asarray(self.mean)
        S = np.asarray(self.cov)
        P = np.linalg.inv(S)
        D = X - mu
        q = np.einsum("ij,jk,ik->i", D, P, D)
        _, logdet = np.linalg.slogdet(S)
        return np.exp(-0.5 * q - 0.5 * (mu.size * np.log(2.0 * np.pi) + logdet))

    def grad(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "uniform":
            return np.zeros_like(X)
        p = self.pdf(X)[:, None]
        if self.kind == "vmf":
            mu = np.asarray(self.mean)
            u = (X @ mu)[:, None]
            return self.kappa * p * (mu[None] - u * X)
        P = np.linalg.inv(np.asarray(self.cov))
        return -p * ((X - np.asarray(self.mean)) @ P)

    def laplacian(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "uniform":
            return np.zeros(X.shape[0])
        p = self.pdf(X)
        if self.kind == "vmf":
            u = X @ np.asarray(self.mean)
            k, m = self.kappa, self.manifold.m
            return p * (k**2 * (1.0 - u**2) - m * k * u)
        P = np.linalg.inv(np.asarray(self.cov))
        g = (X - np.asarray(self.mean)) @ P
        return p * (np.sum(g**2, axis=1) - np.trace(P))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        man = self.manifold
        if self.kind == "gaussian":
            L = np.linalg.cholesky(np.asarray(self.cov))
            return np.asarray(self.mean) + rng.standard_normal((n, man.m)) @ L.T
        if man.kind == CIRCLE:
            if self.kind == "uniform":
                theta = rng.uniform(-np.pi, np.pi, size=n)
            else:
                theta = rng.vonmises(angles(np.asarray(self.mean)), self.kappa, size=n)
            return angle_points(theta)
        mu = np.asarray(self.mean) if self.kind == "vmf" else np.array([0.0, 0.0, 1.0])
        return _vmf_rows(rng, mu, self.kappa, n)


# -- target functions ----------------------------------------------------------------


@dataclass(frozen=True)
class TargetFunction:
    """``f`` with its Riemannian gradient (ambient tangent vectors) and Laplacian."""

    name: str
    f: Callable
    grad: Callable
    laplacian: Callable
    support: tuple | None = field(default=None, compare=False)

    def __call__(self, X) -> np.ndarray:
        return self.f(np.atleast_2d(np.asarray(X, dtype=np.float64)))


def zonal_function(manifold: Manifold, axis, F, dF, d2F, name: str) -> TargetFunction:
    """``F(e . x)`` on the circle or the 2-sphere.

    Gradient ``F'(u) (e - u x)`` and Laplacian ``(1 - u^2) F'' - m u F'``.
    """
    e = np.asarray(axis, dtype=np.float64).ravel()
    m = manifold.m

    def f(X):
        return F(X @ e)

    def grad(X):
        u = (X @ e)[:, None]
        return dF(u) * (e[None] - u * X)

    def lap(X):
        u = X @ e
        return (1.0 - u**2) * d2F(u) - m * u * dF(u)

    return TargetFunction(name, f, grad, lap)


def circle_function(g, dg, d2g, name: str, support=None) -> TargetFunction:
    """``g(theta)`` on the circle, with ``theta = atan2(y, x)``."""

    def f(X):
        return g(angles(X))

    def grad(X):
        th = angles(X)
        return dg(th)[:, None] * np.stack([-np.sin(th), np.cos(th)], axis=1)

    def lap(X):
        return d2g(angles(X))

    return TargetFunction(name, f, grad, lap, support)


def constant_function(value: float = 0.0) -> TargetFunction:
    def f(X):
        return np.full(X.shape[0], float(value))

    return TargetFunction(f"constant({value:g})", f, np.zeros_like, lambda X: np.zeros(X.shape[0]))


def coordinate_function(manifold: Manifold, i: int) -> TargetFunction:
    """The ambient coordinate ``x_i`` restricted to the manifold."""
    e = np.zeros(manifold.ambient_dim)
    e[i] = 1.0
    if manifold.kind == EUCLIDEAN:
        return linear_function(e)
    one = np.ones_like
    return zonal_function(manifold, e, lambda u: u, one, np.zeros_like, f"x{i}")


def linear_function(w) -> TargetFunction:
    w = np.asarray(w, dtype=np.float64).ravel()
    return TargetFunction(
        "linear", lambda X: X @ w, lambda X: np.broadcast_to(w, X.shape).copy(), lambda X: np.zeros(X.shape[0])
    )


def quadratic_function(Q) -> TargetFunction:
    """``x^T Q x`` on ``R^m``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    Qs = Q + Q.T
    return TargetFunction(
        "quadratic",
        lambda X: np.einsum("ij,jk,ik->i", X, Q, X),
        lambda X: X @ Qs,
        lambda X: np.full(X.shape[0], np.trace(Qs)),
    )


def circle_cos() -> TargetFunction:
    return circle_function(np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t), "cos")


def circle_sin() -> TargetFunction:
    return circle_function(np.sin, np.cos, lambda t: -np.sin(t), "sin")


def sphere_y1(axis=(0.0, 0.0, 1.0)) -> TargetFunction:
    return zonal_function(Manifold.sphere2(), axis, lambda u: u, np.ones_like, np.zeros_like, "Y1")


def sphere_y2(axis=(0.0, 0.0, 1.0)) -> TargetFunction:
    return zonal_function(
        Manifold.sphere2(), axis, lambda u: 0.5 * (3.0 * u**2 - 1.0), lambda u: 3.0 * u, lambda u: np.full_like(u, 3.0), "Y2"
    )


# bump b(u) = (1 - u^2)^4 (1 - 11 u^2) on [-1, 1]: b(0) = 1 and int b = 0,
# so its antiderivative vanishes outside the support
_BUMP = Polynomial([1.0, 0.0, -1.0]) ** 4 * Polynomial([1.0, 0.0, -11.0])
_BUMP_D = _BUMP.deriv()
_BUMP_I = _BUMP.integ(lbnd=-1.0)


def _max_abs(poly: Polynomial) -> float:
    crit = poly.deriv().roots()
    crit = crit[np.isreal(crit)].real
    pts = np.concatenate([crit[np.abs(crit) <= 1.0], [-1.0, 1.0]])
    return float(np.max(np.abs(poly(pts))))


BUMP_MAX_SLOPE = _max_abs(_BUMP_D)
DEFAULT_RAMP_BOUND = 875.0


def ramp_function(R: float, c: float = DEFAULT_RAMP_BOUND, theta0: float = 0.5 * np.pi) -> TargetFunction:
    """Ramp ``f_R`` on the circle with slope ``R`` at ``theta0``.

    ``f_R' = R b((theta - theta0) / L_R)`` with ``L_R = R^2 max|b'| / c``,
    so ``f_R`` is locally affine with slope ``R`` around ``theta0``, is
    compactly supported on ``|theta - theta0| < L_R`` and has
    ``sup |f_R''| = c / R``.  The Laplacian bound ``c`` therefore holds for
    every ``R >= 1``.  ``c = 0`` leaves only the constant function.
    """
    if not R > 0:
        raise InvalidArgumentError("ramp slope must be positive")
    if c < 0:
        raise InvalidArgumentError("Laplacian bound must be >= 0")
    if c == 0:
        return constant_function(0.0)
    L = R**2 * BUMP_MAX_SLOPE / c
    if L >= np.pi:
        raise InvalidArgumentError(f"ramp support half-width {L:.3g} wraps the circle; increase c")

    def wrap(t):
        return np.mod(t - theta0 + np.pi, 2.0 * np.pi) - np.pi

    def inside(t):
        u = wrap(t) / L
        return u, np.abs(u) < 1.0

    def g(t):
        u, ok = inside(t)
        return np.where(ok, R * L * _BUMP_I(np.clip(u, -1, 1)), 0.0)

    def dg(t):
        u, ok = inside(t)
        return np.where(ok, R * _BUMP(np.clip(u, -1, 1)), 0.0)

    def d2g(t):
        u, ok = inside(t)
        return np.where(ok, (R / L) * _BUMP_D(np.clip(u, -1, 1)), 0.0)

    return circle_function(g, dg, d2g, f"ramp(R={R:g})", support=(theta0 - L, theta0 + L))


def target_function(name: str, manifold: Manifold) -> TargetFunction:
    """Registered targets by name: cos, sin (circle); y1, y2 (sphere2); x0, x1, ... (any)."""
    table = {
        (CIRCLE, "cos"): circle_cos,
        (CIRCLE, "sin"): circle_sin,
        (SPHERE2, "y1"): sphere_y1,
        (SPHERE2, "y2"): sphere_y2,
    }
    key = (manifold.kind, name.lower())
    if key in table:
        return table[key]()
    if name.lower() == "constant":
        return constant_function(1.0)
    if name.startswith("x") and name[1:].isdigit() and int(name[1:]) < manifold.ambient_dim:
        return coordinate_function(manifold, int(name[1:]))
    raise InvalidArgumentError(f"no target function {name!r} on {manifold.kind}")


# -- constants and leading terms -----------------------------------------------------


@dataclass(frozen=True)
class IsbConstant:
    """``A(m, k, n) = (k Gamma(1 + m/2) / (n pi^(m/2)))^(4/m) / (4 (m + 2)^2)``."""

    m: int
    k: float
    n: float

    @property
    def value(self) -> float:
        m = self.m
        # Gamma(1 + m/2) / pi^(m/2) is 1/2 for m = 1 and 1/pi for m = 2; integer
        # powers keep A(m, 2k, n) = 2^(4/m) A(m, k, n) exact in floating point
        if m == 1:
            base = self.k * 0.5 / self.n
            return float(base * base * base * base / 36.0)
        if m == 2:
            base = self.k / (np.pi * self.n)
            return float(base * base / 64.0)
        log_base = np.log(self.k) + gammaln(1.0 + m / 2.0) - np.log(self.n) - 0.5 * m * np.log(np.pi)
        return float(np.exp(4.0 / m * log_base) / (4.0 * (m + 2) ** 2))


def _check_kn(k, n):
    if int(k) != k or int(n) != n or not 1 <= k <= n:
        raise InvalidArgumentError(f"need integers 1 <= k <= n, got k={k}, n={n}")


def _radius(manifold: Manifold, density: Density, X, k, n, correction: bool = False) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    p = density.pdf(X)
    if np.any(p <= 0):
        raise DomainError("density vanishes at the query point")
    m = manifold.m
    log_r = (np.log(k) + gammaln(1.0 + m / 2.0) - np.log(n) - np.log(p) - 0.5 * m * np.log(np.pi)) / m
    r = np.exp(log_r)
    if correction:
        lap_ratio = density.laplacian(X) / p
        r = r * (1.0 - r**2 / (2.0 * m * (m + 2)) * (lap_ratio - manifold.scalar_curvature / 3.0))
    return r


def knn_radius(manifold: Manifold, density: Density, x, k: int, n: int, correction: bool = False):
    """Radius of the ball holding ``k`` of ``n`` samples in expectation.

    The leading term is ``(k Gamma(1 + m/2) / (n p(x) pi^(m/2)))^(1/m)``.
    With ``correction`` the next-order factor from the density Laplacian and
    the scalar curvature is applied,
    ``r0 (1 - r0^2 / (2 m (m + 2)) (Lap p / p - Scal / 3))``.

    Raises
    ------
    DomainError
        If ``p(x) = 0``.
    """
    _check_kn(k, n)
    r = _radius(manifold, density, x, k, n, correction)
    return float(r[0]) if np.ndim(x) == 1 else r


def _bias_factor(density: Density, target: TargetFunction, X) -> np.ndarray:
    p = density.pdf(X)
    if np.any(p <= 0):
        raise DomainError("density vanishes at the query point")
    design = np.sum(target.grad(X) * density.grad(X), axis=1) / p
    return target.laplacian(X) + 2.0 * design


def bias_leading_term(manifold: Manifold, density: Density, target: TargetFunction, x, k: int, n: int, correction: bool = False):
    """``r_k(x)^2 / (2 (m + 2)) * (Lap f + 2 <grad f, grad p> / p)``."""
    _check_kn(k, n)
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    r = _radius(manifold, density, X, k, n, correction)
    out = r**2 / (2.0 * (manifold.m + 2)) * _bias_factor(density, target, X)
    return float(out[0]) if np.ndim(x) == 1 else out


def isb_leading(manifold: Manifold, density: Density, target: TargetFunction, k: int, n: int, grid=None, grid_size: int | None = None) -> float:
    """``A(m, k, n) * int (Lap f + 2 <grad f, grad p>/p)^2 p^(1 - 4/m) dvol`` on a deterministic grid."""
    _check_kn(k, n)
    X, w = manifold.grid(grid_size) if grid is None else grid
    p = density.pdf(X)
    g = _bias_factor(density, target, X)
    m = manifold.m
    return IsbConstant(m, k, n).value * float(np.sum(w * g**2 * p ** (1.0 - 4.0 / m)))


def support_grid(target: TargetFunction, size: int = 4096, margin: float = 0.0):
    """Midpoint grid on the circle restricted to ``target.support`` (plus ``margin``)."""
    if target.support is None:
        return Manifold.circle().grid(size)
    lo, hi = target.support
    lo, hi = lo - margin, hi + margin
    h = (hi - lo) / size
    theta = lo + h * (np.arange(size) + 0.5)
    return angle_points(theta), np.full(size, h)


# -- k-NN regression ------------------------------------------------------------------


def knn_regress(query, data, targets, k: int, manifold: Manifold | None = None):
    """Mean of ``targets`` over the ``k`` data points nearest to ``query``.

    Distances are geodesic on ``manifold`` (Euclidean when omitted); equal
    distances are ordered by sample index.
    """
    data = np.atleast_2d(np.asarray(getattr(data, "data", data), dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).ravel()
    n = data.shape[0]
    if targets.size != n:
        raise InvalidArgumentError("one target value per data point is required")
    if int(k) != k or not 1 <= k <= n:
        raise InvalidArgumentError(f"need 1 <= k <= n, got k={k}, n={n}")
    man = manifold or Manifold.euclidean(data.shape[1])
    Q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    out = np.empty(Q.shape[0])
    for i, q in enumerate(Q):
        order = np.argsort(man.distance(data, q), kind="stable")
        out[i] = targets[order[:k]].mean()
    return float(out[0]) if np.ndim(query) == 1 else out


def _tree_knn(manifold: Manifold, data, queries, k: int):
    """Indices ``(G, k)`` of nearest neighbours and geodesic k-th distances ``(G,)``.

    Chordal and geodesic distances have the same ranks, so the tree works on
    ambient coordinates.
    """
    dist, idx = cKDTree(data).query(queries, k=k)
    dist = np.asarray(dist).reshape(len(queries), k)
    idx = np.asarray(idx).reshape(len(queries), k)
    return idx, manifold.chordal_to_geodesic(dist[:, -1])


def _tangent_frame(X):
    a = np.where(np.abs(X[:, 2:3]) < 0.9, np.array([[0.0, 0.0, 1.0]]), np.array([[1.0, 0.0, 0.0]]))
    e1 = a - np.sum(a * X, axis=1, keepdims=True) * X
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return e1, np.cross(X, e1)


def _ball_nodes(manifold: Manifold, X, rho):
    """Quadrature for geodesic balls ``B(x, rho)`` and their boundary spheres.

    Returns interior nodes ``(G, Ni, D)`` with volume weights ``(G, Ni)`` and
    boundary nodes ``(G, Nb, D)`` with surface weights ``(G, Nb)``.
    """
    X = np.atleast_2d(X)
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    if manifold.m == 1:
        s, w = np.polynomial.legendre.leggauss(_ARC_NODES)
        if manifold.kind == CIRCLE:
            th = angles(X)[:, None]
            inner = angle_points(th + rho[:, None] * s[None])
            bound = angle_points(th + rho[:, None] * np.array([[-1.0, 1.0]]))
        else:
            inner = (X[:, 0:1] + rho[:, None] * s[None])[..., None]
            bound = (X[:, 0:1] + rho[:, None] * np.array([[-1.0, 1.0]]))[..., None]
        return inner, rho[:, None] * w[None], bound, np.ones((X.shape[0], 2))
    if manifold.m != 2:
        raise InvalidArgumentError("ball quadrature is available for m <= 2")
    s, w = np.polynomial.legendre.leggauss(_BALL_RADIAL)
    s = 0.5 * (s + 1.0)
    alpha = 2.0 * np.pi * np.arange(_BALL_ANGULAR) / _BALL_ANGULAR
    ca, sa = np.cos(alpha), np.sin(alpha)
    dalpha = 2.0 * np.pi / _BALL_ANGULAR
    radii = rho[:, None] * s[None]  # (G, Nr)
    if manifold.kind == SPHERE2:
        e1, e2 = _tangent_frame(X)
        dirs = ca[None, :, None] * e1[:, None] + sa[None, :, None] * e2[:, None]  # (G, Na, 3)

        def at(r):
            return np.cos(r)[..., None, None] * X[:, None, None] + np.sin(r)[..., None, None] * dirs[:, None]

        jac = np.sin(radii)
        bjac = np.sin(rho)
    else:
        dirs = np.broadcast_to(np.stack([ca, sa], axis=1)[None], (X.shape[0], _BALL_ANGULAR, 2))

        def at(r):
            return X[:, None, None] + r[..., None, None] * dirs[:, None]

        jac = radii
        bjac = rho
    G = X.shape[0]
    inner = at(radii).reshape(G, -1, X.shape[1])
    wi = (0.5 * rho[:, None] * w[None] * jac)[:, :, None] * dalpha
    wi = np.broadcast_to(wi, (G, _BALL_RADIAL, _BALL_ANGULAR)).reshape(G, -1)
    bound = at(rho[:, None])[:, 0]
    wb = np.broadcast_to((bjac * dalpha)[:, None], (G, _BALL_ANGULAR))
    return inner, wi, bound, wb


def conditional_mean(manifold: Manifold, density: Density, g: Callable, X, rho, k: int) -> np.ndarray:
    """``E[(1/k) sum_{i<=k} g(X_(i)) | k-th neighbour distance = rho]`` at each row of ``X``.

    ``g`` maps ``(N, D)`` points to ``(N,)`` or ``(N, q)`` values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    inner, wi, bound, wb = _ball_nodes(manifold, X, rho)
    G, Ni, D = inner.shape
    Nb = bound.shape[1]
    gi = np.asarray(g(inner.reshape(-1, D)), dtype=np.float64).reshape(G, Ni, -1)
    gb = np.asarray(g(bound.reshape(-1, D)), dtype=np.float64).reshape(G, Nb, -1)
    pi = (density.pdf(inner.reshape(-1, D)).reshape(G, Ni) * wi)[..., None]
    pb = (density.pdf(bound.reshape(-1, D)).reshape(G, Nb) * wb)[..., None]
    ball = np.sum(pi * gi, axis=1) / np.sum(pi, axis=1)
    edge = np.sum(pb * gb, axis=1) / np.sum(pb, axis=1)
    out = ((k - 1) * ball + edge) / k
    return out[:, 0] if out.shape[1] == 1 else out


def _check_reps(reps):
    if int(reps) != reps or reps < 30:
        raise InvalidArgumentError(f"reps must be an integer >= 30, got {reps}")


def _check_estimator(estimator):
    if estimator not in ("plain", "conditional"):
        raise InvalidArgumentError(f"estimator must be 'plain' or 'conditional', got {estimator!r}")


def pointwise_bias_mc(
    manifold: Manifold,
    density: Density,
    target: TargetFunction,
    x,
    k: int,
    n: int,
    reps: int,
    seed: int = 0,
    estimator: str = "plain",
) -> tuple[float, float]:
    """Mean and standard error over replications of ``f_hat(x) - f(x)``.

    ``estimator="plain"`` evaluates :func:`knn_regress` on fresh samples;
    ``"conditional"`` replaces it by its conditional mean given the sampled
    k-th neighbour distance.
    """
    _check_kn(k, n)
    _check_reps(reps)
    _check_estimator(estimator)
    x = np.asarray(x, dtype=np.float64).ravel()
    fx = float(target(x[None])[0])
    vals = np.empty(reps)
    rhos = np.empty(reps)
    for r in range(reps):
        data = density.sample(n, substream(seed, "knn_pointwise", r))
        dist = manifold.distance(data, x)
        if estimator == "plain":
            idx = np.argpartition(dist, k - 1)[:k]
            vals[r] = target(data[idx]).mean() - fx
        else:
            rhos[r] = np.partition(dist, k - 1)[k - 1]
    if estimator == "conditional":
        vals = conditional_mean(manifold, density, target, np.repeat(x[None], reps, 0), rhos, k) - fx
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(reps))


@dataclass
class IsbEstimate:
    value: float
    stderr: float
    pointwise: np.ndarray
    grid: np.ndarray
    weights: np.ndarray


def _default_query_grid(manifold: Manifold):
    if manifold.kind == CIRCLE:
        return manifold.grid(256)
    if manifold.kind == SPHERE2:
        return manifold.grid(512)
    raise DomainError("R^m is not compact; pass an explicit query grid")


def isb_mc(
    manifold: Manifold,
    density: Density,
    target: TargetFunction,
    k: int,
    n: int,
    reps: int,
    query_grid=None,
    seed: int = 0,
    estimator: str = "conditional",
    debias: bool = True,
    detail: bool = False,
):
    """Monte Carlo integrated squared bias ``sum_j w_j p(x_j) bias(x_j)^2``.

    Every replication draws one sample of size ``n`` and evaluates all grid
    queries on it.  With the plain estimator and ``debias`` the squared mean
    is corrected by its sampling variance ``s_j^2 / reps``.  The standard
    error is a jackknife over replications.
    """
    _check_kn(k, n)
    _check_reps(reps)
    _check_estimator(estimator)
    Xq, w = _default_query_grid(manifold) if query_grid is None else query_grid
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    fq = target(Xq)
    B = np.empty((reps, Xq.shape[0]))
    for r in range(reps):
        data = density.sample(n, substream(seed, "knn_isb", r))
        idx, rho = _tree_knn(manifold, data, Xq, k)
        if estimator == "plain":
            B[r] = target(data)[idx].mean(axis=1) - fq
        else:
            B[r] = conditional_mean(manifold, density, target, Xq, rho, k) - fq
    wp = w * density.pdf(Xq)

    def isb_of(mean, var):
        sq = mean**2 - (var / reps if (debias and estimator == "plain") else 0.0)
        return float(np.sum(wp * sq))

    mean = B.mean(axis=0)
    var = B.var(axis=0, ddof=1)
    value = isb_of(mean, var)
    # jackknife over replications
    loo_mean = (reps * mean[None] - B) / (reps - 1)
    sq_dev = (B - mean[None]) ** 2
    loo_var = (np.sum(sq_dev, axis=0)[None] - sq_dev * reps / (reps - 1)) / (reps - 2)
    sq = loo_mean**2
    if debias and estimator == "plain":
        sq = sq - loo_var / (reps - 1)
    loo = sq @ wp
    stderr = float(np.sqrt((reps - 1) / reps * np.sum((loo - loo.mean()) ** 2)))
    if detail:
        return IsbEstimate(value, stderr, mean, Xq, w)
    return value


# -- exact expectation on the circle --------------------------------------------------


def _quantile_nodes(k: int, n: int, count: int):
    """Nodes ``u`` and weights for ``E[g(U)]``, ``U ~ Beta(k, n - k + 1)``.

    Gauss-Hermite in the normal score of the quantile keeps the integrand
    smooth even for very peaked Beta laws.
    """
    z, w = roots_hermitenorm(count)
    w = w / np.sqrt(2.0 * np.pi)
    a, b = k, n - k + 1
    u = np.where(z < 0, beta_dist.ppf(ndtr(z), a, b), beta_dist.isf(ndtr(-z), a, b))
    return u, w


def expected_estimate_circle(density: Density, target: TargetFunction, theta, k: int, n: int, nodes: int = 48) -> np.ndarray:
    """Exact ``E[f_hat(theta)]`` of the k-NN estimator on the circle.

    With ``F_theta(rho)`` the probability of the arc of half-width ``rho``,
    ``F_theta(D_k)`` is ``Beta(k, n - k + 1)``; the conditional mean given
    ``D_k`` is integrated over that law.
    """
    _check_kn(k, n)
    theta = np.asarray(theta, dtype=np.float64).ravel()
    u, wq = _quantile_nodes(k, n, nodes)
    s, ws = np.polynomial.legendre.leggauss(_ARC_NODES)
    th = theta[:, None]

    def p_at(t):
        return density.pdf(angle_points(t.ravel())).reshape(t.shape)

    def arc_mass(rho):
        t = th[..., None] + rho[..., None] * s
        return rho * np.sum(ws * p_at(t), axis=-1)

    rho = np.minimum(u[None] / (2.0 * p_at(th)), np.pi)
    for _ in range(50):
        dF = p_at(th + rho) + p_at(th - rho)
        step = (arc_mass(rho) - u[None]) / dF
        rho = np.clip(rho - step, 0.5 * rho, np.pi)
        if np.max(np.abs(step) / rho) < 1e-13:
            break
    t = th[..., None] + rho[..., None] * s
    pv = p_at(t)
    fv = target(angle_points(t.ravel())).reshape(t.shape)
    ball = np.sum(ws * pv * fv, axis=-1) / np.sum(ws * pv, axis=-1)
    pp, pm = p_at(th + rho), p_at(th - rho)
    fp = target(angle_points((th + rho).ravel())).reshape(rho.shape)
    fm = target(angle_points((th - rho).ravel())).reshape(rho.shape)
    edge = (fp * pp + fm * pm) / (pp + pm)
    cond = ((k - 1) * ball + edge) / k
    return cond @ wq


def exact_isb_circle(density: Density, target: TargetFunction, k: int, n: int, grid=None, nodes: int = 48) -> float:
    """``int (E[f_hat] - f)^2 p dtheta`` with the exact order-statistic expectation."""
    X, w = Manifold.circle().grid(1024) if grid is None else grid
    bias = expected_estimate_circle(density, target, angles(X), k, n, nodes) - target(X)
    return float(np.sum(w * density.pdf(X) * bias**2))


# -- minimax probe --------------------------------------------------------------------


@dataclass
class MinimaxRow:
    density: str
    slope: float
    isb: float
    isb_leading: float
    sup_laplacian: float


def minimax_probe(
    manifold: Manifold,
    densities: list,
    c: float = DEFAULT_RAMP_BOUND,
    slope_grid=(1.0, 4.0, 16.0),
    k: int = 32,
    n: int = 1_000_000,
    reps: int = 30,
    seed: int = 0,
    method: str = "quadrature",
    grid_size: int = 2048,
) -> list[MinimaxRow]:
    """ISB of the ramp family ``f_R`` for each density and slope.

    ``method="quadrature"`` integrates the exact expectation of the
    estimator; ``"mc"`` uses :func:`isb_mc` with the conditional estimator
    and ``reps`` replications.  Both restrict the query grid to a
    neighbourhood of the ramp support, outside of which the bias vanishes.

    Raises
    ------
    InvalidArgumentError
        If some ``f_R`` violates ``sup |Lap f_R| <= c`` on the grid.
    """
    if manifold.kind != CIRCLE:
        raise InvalidArgumentError("the ramp family is defined on the circle")
    if method not in ("quadrature", "mc"):
        raise InvalidArgumentError(f"unknown method {method!r}")
    _check_kn(k, n)
    rows = []
    for dens in densities:
        p_min = float(np.min(dens.pdf(manifold.grid(4096)[0])))
        u_max = beta_dist.isf(1e-12, k, n - k + 1)
        margin = 1.5 * u_max / (2.0 * p_min)
        for R in slope_grid:
            f = ramp_function(R, c)
            X, w = support_grid(f, grid_size, margin)
            lap = float(np.max(np.abs(f.laplacian(X)))) if f.support is not None else 0.0
            if lap > c * (1.0 + 1e-9):
                raise InvalidArgumentError(f"ramp with R={R:g} has sup|Lap f| = {lap:.4g} > c = {c:g}")
            if f.support is None:
                rows.append(MinimaxRow(dens.name, float(R), 0.0, 0.0, 0.0))
                continue
            lead = isb_leading(manifold, dens, f, k, n, grid=(X, w))
            if method == "quadrature":
                val = exact_isb_circle(dens, f, k, n, grid=(X, w))
            else:
                val = isb_mc(manifold, dens, f, k, n, reps, (X, w), seed=seed)
            rows.append(MinimaxRow(dens.name, float(R), val, lead, lap))
    return rows


# -- neighbourhood anisotropy ---------------------------------------------------------


@dataclass
class Anisotropy:
    shift: np.ndarray
    stderr: np.ndarray
    eig_ratio: float
    dominant_axis: np.ndarray
    predicted: np.ndarray


def neighborhood_anisotropy(
    manifold: Manifold,
    density: Density,
    query,
    k: int,
    n: int,
    reps: int,
    seed: int = 0,
    estimator: str = "conditional",
) -> Anisotropy:
    """Mean centroid shift of the ``k`` nearest neighbours and their scatter shape.

    ``shift`` estimates ``E[centroid - query]`` (see the module notes on
    estimators); ``eig_ratio`` is the ratio of the largest to the smallest
    eigenvalue of the neighbour covariance averaged over replications, with
    ``dominant_axis`` its leading eigenvector.  ``predicted`` is the
    leading-order shift, the bias of the coordinate functions.
    """
    _check_kn(k, n)
    _check_reps(reps)
    _check_estimator(estimator)
    q = np.asarray(query, dtype=np.float64).ravel()
    D = manifold.ambient_dim
    shifts = np.empty((reps, D))
    rhos = np.empty(reps)
    scatter = np.zeros((D, D))
    for r in range(reps):
        data = density.sample(n, substream(seed, "knn_anisotropy", r))
        dist = manifold.distance(data, q)
        idx = np.argpartition(dist, k - 1)[:k]
        nb = data[idx]
        rhos[r] = dist[idx].max()
        shifts[r] = nb.mean(axis=0) - q
        scatter += np.cov(nb, rowvar=False)
    if estimator == "conditional":
        shifts = conditional_mean(manifold, density, lambda Y: Y - q, np.repeat(q[None], reps, 0), rhos, k)
    evals, evecs = np.linalg.eigh(scatter / reps)
    predicted = np.array(
        [bias_leading_term(manifold, density, coordinate_function(manifold, i), q, k, n) for i in range(D)]
    )
    return Anisotropy(
        shift=shifts.mean(axis=0),
        stderr=shifts.std(axis=0, ddof=1) / np.sqrt(reps),
        eig_ratio=float(evals[-1] / max(evals[0], np.finfo(float).tiny)),
        dominant_axis=evecs[:, -1],
        predicted=predicted,
    )
