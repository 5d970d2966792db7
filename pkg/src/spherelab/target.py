"""Law of a fixed-direction projection of a uniform point on S^{d-1}.

For ``X ~ Unif(S^{d-1})`` and a unit ``a``, ``T = a^T X`` has density

    rho_d(t) = C_d (1 - t^2)^((d-3)/2),    |t| < 1,

with ``C_d = Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2))``.  For large ``d`` the
law is close to ``N(0, 1/d)``; :func:`select_target` switches to that
approximation above 256 dimensions.

Integrals against ``rho_d`` use Gauss-Legendre on the substitution
``t = sin(u)``, which turns ``(1-t^2)^((d-3)/2) dt`` into the smooth
weight ``cos(u)^(d-2) du`` for every ``d`` (including the singular ``d = 2``
and the half-integer exponents of even ``d``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gamma, gammaln

from spherelab.errors import DomainError, InvalidArgumentError
from spherelab.rng import substream

GAUSSIAN_THRESHOLD = 256
QUAD_NODES = 257

EXACT = "exact"
GAUSSIAN = "gaussian"


def _check_dim(d):
    if int(d) != d or d < 2:
        raise InvalidArgumentError(f"dimension must be an integer >= 2, got {d}")


# Gamma(d/2) overflows past d ~ 342; below that the direct ratio is exact to
# an ulp, while the log-space difference loses ~1e-13 to cancellation
_DIRECT_MAX_DIM = 340


def log_normalizer(d: int) -> float:
    _check_dim(d)
    if d <= _DIRECT_MAX_DIM:
        return float(np.log(normalizer(d)))
    return float(gammaln(d / 2.0) - 0.5 * np.log(np.pi) - gammaln((d - 1) / 2.0))


def normalizer(d: int) -> float:
    """``C_d``; switches to log space for large ``d`` so nothing overflows."""
    _check_dim(d)
    if d <= _DIRECT_MAX_DIM:
        return float(gamma(d / 2.0) / gamma((d - 1) / 2.0) / np.sqrt(np.pi))
    return float(np.exp(log_normalizer(d)))


@lru_cache(maxsize=None)
def _sine_nodes(d: int, nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * np.pi * x
    # weight C_d cos(u)^(d-2) du, built in log space
    with np.errstate(divide="ignore"):
        logw = log_normalizer(d) + (d - 2) * np.log(np.cos(u))
    weights = 0.5 * np.pi * w * np.exp(logw)
    return np.sin(u), weights


def rho_expectation(d: int, g, nodes: int = QUAD_NODES) -> float:
    """``E[g(T)]`` for ``T ~ rho_d`` by Gauss-Legendre in ``u`` with ``t = sin u``."""
    _check_dim(d)
    t, w = _sine_nodes(int(d), int(nodes))
    return float(np.sum(w * g(t)))


def rho_quadrature_mass(d: int, nodes: int = QUAD_NODES) -> float:
    """``int rho_d`` by quadrature; equals 1 up to rounding."""
    return rho_expectation(d, np.ones_like, nodes)


@dataclass(frozen=True)
class ProjectionTarget:
    """Reference law for sliced variables: exact ``rho_d`` or ``N(0, 1/d)``."""

    kind: str
    d: int
    c_d: float | None = None
    sigma2: float | None = None
    _cf_cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        _check_dim(self.d)
        if self.kind == EXACT:
            if self.c_d is None:
                object.__setattr__(self, "c_d", normalizer(self.d))
        elif self.kind == GAUSSIAN:
            object.__setattr__(self, "sigma2", 1.0 / self.d)
        else:
            raise InvalidArgumentError(f"unknown target kind {self.kind!r}")

    @classmethod
    def exact(cls, d: int) -> "ProjectionTarget":
        return cls(EXACT, int(d))

    @classmethod
    def gaussian(cls, d: int) -> "ProjectionTarget":
        return cls(GAUSSIAN, int(d))

    @property
    def variance(self) -> float:
        return 1.0 / self.d

    def pdf(self, t):
        return rho_pdf(self, t)

    def cf(self, s):
        return characteristic_function(self, s)

    def cf_on_grid(self, grid: np.ndarray) -> np.ndarray:
        """CF on a frequency grid, cached per grid (sample independent)."""
        grid = np.ascontiguousarray(grid, dtype=np.float64)
        key = grid.tobytes()
        hit = self._cf_cache.get(key)
        if hit is None:
            hit = characteristic_function(self, grid)
            hit.setflags(write=False)
            self._cf_cache[key] = hit
        return hit


def _as_target(target) -> ProjectionTarget:
    if isinstance(target, ProjectionTarget):
        return target
    return ProjectionTarget.exact(int(target))


def rho_pdf(target, t):
    """Density of the target at ``t``.

    For the exact law the density is 0 outside ``(-1, 1)`` when ``d >= 3``;
    for ``d = 2`` it diverges at the endpoints and ``|t| >= 1`` is a domain
    error.
    """
    target = _as_target(target)
    t = np.asarray(t, dtype=np.float64)
    if target.kind == GAUSSIAN:
        s2 = target.sigma2
        return np.exp(-0.5 * t**2 / s2) / np.sqrt(2.0 * np.pi * s2)
    d = target.d
    inside = np.abs(t) < 1.0
    if d == 2 and not np.all(inside):
        raise DomainError("rho_2 is unbounded at |t| = 1 and undefined beyond")
    one_minus = np.where(inside, 1.0 - t**2, 1.0)
    out = np.where(inside, target.c_d * one_minus ** ((d - 3) / 2.0), 0.0)
    return out if out.ndim else float(out)


def characteristic_function(target, s):
    """``E[exp(i s T)]`` (real by symmetry).

    Exact targets integrate ``cos(s t)`` against ``rho_d``; the Gaussian
    approximation uses ``exp(-s^2 / (2d))``.
    """
    target = _as_target(target)
    s = np.asarray(s, dtype=np.float64)
    if target.kind == GAUSSIAN:
        return np.exp(-0.5 * target.sigma2 * s**2)
    t, w = _sine_nodes(target.d, QUAD_NODES)
    flat = s.reshape(-1)
    out = np.cos(np.outer(flat, t)) @ w
    return out.reshape(s.shape) if s.ndim else float(out[0])


def select_target(d: int) -> ProjectionTarget:
    """Exact ``rho_d`` for ``d <= 256``, ``N(0, 1/d)`` for ``d > 256``."""
    _check_dim(d)
    if d > GAUSSIAN_THRESHOLD:
        return ProjectionTarget.gaussian(d)
    return ProjectionTarget.exact(d)


def sample_target(target, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` values from the target.

    The exact law is sampled as ``2B - 1`` with ``B ~ Beta((d-1)/2, (d-1)/2)``,
    which is the law of one coordinate of a uniform point on S^{d-1}.
    """
    target = _as_target(target)
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n}")
    rng = substream(seed, "target", target.kind, target.d, n)
    if target.kind == GAUSSIAN:
        return rng.normal(0.0, np.sqrt(target.sigma2), size=n)
    a = (target.d - 1) / 2.0
    return 2.0 * rng.beta(a, a, size=n) - 1.0
