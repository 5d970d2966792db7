"""Epps-Pulley characteristic-function discrepancy.

For a scalar sample ``x_1..x_n`` and a symmetric reference law ``Y``,

    EP = n * int |phi_hat(t) - phi_Y(t)|^2 w(t) dt,

with ``phi_hat(t) = mean_j exp(i t x_j)`` and ``w`` the ``N(0, v)`` density.
The frequency integral is a trapezoid rule on a symmetric uniform grid
over ``[-H, H]``; since the integrand is even, only ``t >= 0`` is evaluated
with the mirrored weights folded in.

Two evaluation paths exist: :func:`ep_statistic` / :func:`ep_gradient` use
plain numpy on one sample, :func:`ep_batch` evaluates many samples at once
(rows of a matrix) with a compiled kernel that generates ``cos(k h x)`` and
``sin(k h x)`` by angle-addition recurrences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import ndtr

from spherelab.errors import InvalidArgumentError
from spherelab.target import ProjectionTarget, sample_target

# the bundled TBB is too old for numba; workqueue is always available
numba.config.THREADING_LAYER = "workqueue"


@dataclass(frozen=True)
class EPConfig:
    """Weight variance and frequency grid of the EP integral.

    ``quad_halfwidth=None`` resolves to ``7 * sqrt(weight_variance)`` so that
    the truncated weight mass is below ``1e-10``.
    """

    weight_variance: float = 1.0
    quad_nodes: int = 129
    quad_halfwidth: float | None = None

    def __post_init__(self):
        if not self.weight_variance > 0:
            raise InvalidArgumentError("weight_variance must be positive")
        if int(self.quad_nodes) != self.quad_nodes or self.quad_nodes < 17 or self.quad_nodes % 2 == 0:
            raise InvalidArgumentError(f"quad_nodes must be odd and >= 17, got {self.quad_nodes}")
        if self.quad_halfwidth is None:
            object.__setattr__(self, "quad_halfwidth", 7.0 * np.sqrt(self.weight_variance))
        if not self.quad_halfwidth > 0:
            raise InvalidArgumentError("quad_halfwidth must be positive")

    def half_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``t_k = k h >= 0`` and folded trapezoid weights times ``w(t_k)``."""
        n_half = (self.quad_nodes + 1) // 2
        h = self.quad_halfwidth / (n_half - 1)
        t = h * np.arange(n_half)
        v = self.weight_variance
        w = np.exp(-0.5 * t**2 / v) / np.sqrt(2.0 * np.pi * v)
        fold = np.full(n_half, 2.0 * h)
        fold[0] = h
        fold[-1] = h
        return t, fold * w

    def tail_mass(self) -> float:
        """Weight mass outside ``[-H, H]``."""
        return float(2.0 * ndtr(-self.quad_halfwidth / np.sqrt(self.weight_variance)))


DEFAULT_CONFIG = EPConfig()


def _samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidArgumentError("empty sample")
    return x


def empirical_cf(samples, s):
    """``(1/n) sum_j exp(i s x_j)``; vectorized over ``s``."""
    x = _samples(samples)
    s = np.asarray(s, dtype=np.float64)
    out = np.exp(1j * np.multiply.outer(s, x)).mean(axis=-1)
    return out if out.ndim else complex(out)


def _target_cf(target: ProjectionTarget, t: np.ndarray) -> np.ndarray:
    return target.cf_on_grid(t)


def ep_statistic(samples, target: ProjectionTarget, cfg: EPConfig = DEFAULT_CONFIG) -> float:
    """EP discrepancy between ``samples`` and ``target`` (non-negative)."""
    x = _samples(samples)
    t, w = cfg.half_grid()
    phi = _target_cf(target, t)
    arg = np.outer(t, x)
    re = np.cos(arg).mean(axis=1) - phi
    im = np.sin(arg).mean(axis=1)
    return float(x.size * np.sum(w * (re**2 + im**2)))


def ep_gradient(samples, target: ProjectionTarget, cfg: EPConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``d EP / d x_j`` by differentiating under the frequency integral."""
    x = _samples(samples)
    t, w = cfg.half_grid()
    phi = _target_cf(target, t)
    arg = np.outer(t, x)
    c, s = np.cos(arg), np.sin(arg)
    re = c.mean(axis=1) - phi
    im = s.mean(axis=1)
    tw = 2.0 * w * t
    return (tw * im) @ c - (tw * re) @ s


# -- closed form for Gaussian targets ------------------------------------------------

_PAIR_CHUNK = 1024


def _check_variances(sigma2_target, weight_variance):
    if not (sigma2_target > 0 and weight_variance > 0):
        raise InvalidArgumentError("variances must be positive")


def ep_statistic_gaussian_closed_form(samples, sigma2_target: float, weight_variance: float = 1.0) -> float:
    """EP against ``N(0, sigma2_target)`` without quadrature.

    Uses ``int exp(i t a) N(0, v)(t) dt = exp(-a^2 v / 2)``, which gives

        EP = (1/n) sum_jk exp(-v (x_j - x_k)^2 / 2)
             - 2 / sqrt(1 + v s2) sum_j exp(-x_j^2 v' / 2)
             + n / sqrt(1 + 2 v s2),

    where ``v' = v / (1 + v s2)``.
    """
    _check_variances(sigma2_target, weight_variance)
    x = _samples(samples)
    n = x.size
    v, s2 = float(weight_variance), float(sigma2_target)
    pair = 0.0
    for lo in range(0, n, _PAIR_CHUNK):
        diff = x[lo : lo + _PAIR_CHUNK, None] - x[None, :]
        pair += np.exp(-0.5 * v * diff**2).sum()
    vp = v / (1.0 + v * s2)
    cross = np.exp(-0.5 * vp * x**2).sum() / np.sqrt(1.0 + v * s2)
    return float(pair / n - 2.0 * cross + n / np.sqrt(1.0 + 2.0 * v * s2))


def ep_gradient_gaussian_closed_form(samples, sigma2_target: float, weight_variance: float = 1.0) -> np.ndarray:
    _check_variances(sigma2_target, weight_variance)
    x = _samples(samples)
    n = x.size
    v, s2 = float(weight_variance), float(sigma2_target)
    grad = np.empty(n)
    for lo in range(0, n, _PAIR_CHUNK):
        diff = x[lo : lo + _PAIR_CHUNK, None] - x[None, :]
        grad[lo : lo + _PAIR_CHUNK] = -(2.0 * v / n) * (diff * np.exp(-0.5 * v * diff**2)).sum(axis=1)
    vp = v / (1.0 + v * s2)
    grad += 2.0 * vp * x * np.exp(-0.5 * vp * x**2) / np.sqrt(1.0 + v * s2)
    return grad


# -- batched compiled path -----------------------------------------------------------


@numba.njit(parallel=True, cache=True)
def _ep_rows(X, h, phi, W, want_grad):
    rows, n = X.shape
    K = phi.size
    ep = np.empty(rows)
    G = np.empty((rows, n)) if want_grad else np.empty((0, 0))
    for a in numba.prange(rows):
        C = np.zeros(K)
        S = np.zeros(K)
        for j in range(n):
            c1 = np.cos(h * X[a, j])
            s1 = np.sin(h * X[a, j])
            c = 1.0
            s = 0.0
            for k in range(K):
                C[k] += c
                S[k] += s
                c, s = c * c1 - s * s1, s * c1 + c * s1
        total = 0.0
        al = np.empty(K)
        be = np.empty(K)
        for k in range(K):
            re = C[k] / n - phi[k]
            im = S[k] / n
            total += W[k] * (re * re + im * im)
            tw = 2.0 * W[k] * (k * h)
            al[k] = tw * im
            be[k] = -tw * re
        ep[a] = n * total
        if want_grad:
            for j in range(n):
                c1 = np.cos(h * X[a, j])
                s1 = np.sin(h * X[a, j])
                c = 1.0
                s = 0.0
                g = 0.0
                for k in range(K):
                    g += al[k] * c + be[k] * s
                    c, s = c * c1 - s * s1, s * c1 + c * s1
                G[a, j] = g
    return ep, G


def ep_batch(X, target: ProjectionTarget, cfg: EPConfig = DEFAULT_CONFIG, grad: bool = False):
    """EP of every row of ``X`` against ``target``.

    Returns the vector of statistics, or ``(statistics, gradients)`` with a
    gradient row per sample row when ``grad`` is true.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] == 0:
        raise InvalidArgumentError("empty sample")
    t, w = cfg.half_grid()
    phi = np.ascontiguousarray(_target_cf(target, t))
    ep, G = _ep_rows(X, float(t[1]), phi, np.ascontiguousarray(w), bool(grad))
    return (ep, G) if grad else ep


def null_distribution(target: ProjectionTarget, n: int, reps: int, cfg: EPConfig = DEFAULT_CONFIG, seed: int = 0) -> np.ndarray:
    """EP statistics of ``reps`` i.i.d. samples of size ``n`` drawn from ``target``."""
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    draws = sample_target(target, n * reps, seed=seed).reshape(reps, n)
    return ep_batch(draws, target, cfg)


def set_threads(count: int | None):
    """Cap the compiled kernels' thread pool (``None`` leaves the default)."""
    if count is None:
        return
    numba.set_num_threads(max(1, min(int(count), numba.config.NUMBA_NUM_THREADS)))
