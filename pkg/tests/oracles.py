"""Independent reference values and slow-but-obvious implementations.

Nothing here imports the package under test.
"""

from __future__ import annotations

from fractions import Fraction
from math import factorial

import mpmath as mp
import numpy as np
from scipy import integrate, special

mp.mp.dps = 40

# frozen constants (mpmath, 40 digits, rounded to double)
I0_1 = 1.2660658777520082  # I_0(1)
I1_1 = 0.5651591039924851  # I_1(1)
H99_OVER_99 = float(sum(Fraction(1, r) for r in range(1, 100)) / 99)  # E[1/rank], rank ~ U{1..99}
C2 = 1.0 / np.pi
C3 = 0.5
C4 = 2.0 / np.pi


def normalizer_mp(d: int) -> float:
    """``Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2))`` in 40-digit arithmetic."""
    return float(mp.gamma(mp.mpf(d) / 2) / (mp.sqrt(mp.pi) * mp.gamma(mp.mpf(d - 1) / 2)))


def beta_mass_mp(d: int) -> float:
    """``int_{-1}^{1} (1 - t^2)^((d-3)/2) dt = B(1/2, (d-1)/2)``."""
    return float(mp.beta(mp.mpf(1) / 2, mp.mpf(d - 1) / 2))


def projection_cf_bessel(d: int, s):
    """CF of one coordinate of a uniform point on S^{d-1}: ``Gamma(d/2) (2/s)^nu J_nu(s)``, ``nu = d/2 - 1``."""
    s = np.asarray(s, dtype=np.float64)
    nu = d / 2.0 - 1.0
    safe = np.where(s == 0, 1.0, np.abs(s))
    val = special.gamma(d / 2.0) * (2.0 / safe) ** nu * special.jv(nu, safe)
    return np.where(s == 0, 1.0, val)


def bessel_i_series(n: int, x: float, terms: int = 60) -> float:
    """``I_n(x) = sum_m (x/2)^(2m+n) / (m! (m+n)!)`` summed in rationals-free long form."""
    return float(sum(mp.mpf(x / 2) ** (2 * m + n) / (factorial(m) * factorial(m + n)) for m in range(terms)))


def ep_by_adaptive_quad(x, target_cf, v: float = 1.0) -> float:
    """EP via scipy's adaptive quadrature on ``t >= 0`` (slow)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size

    def integrand(t):
        re = np.mean(np.cos(t * x)) - target_cf(t)
        im = np.mean(np.sin(t * x))
        return (re * re + im * im) * np.exp(-0.5 * t * t / v) / np.sqrt(2 * np.pi * v)

    val, _ = integrate.quad(integrand, 0.0, np.inf, limit=400, epsabs=1e-14, epsrel=1e-12)
    return 2.0 * n * val


def central_difference(fun, x, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.empty(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fun(x)
        flat[i] = old - h
        fm = fun(x)
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def average_precision_bruteforce(sims, rel) -> float:
    """AP of one query from an explicit python sort (ties by index)."""
    order = sorted(range(len(sims)), key=lambda j: (-sims[j], j))
    hits, total = 0, 0.0
    for rank, j in enumerate(order, start=1):
        if rel[j]:
            hits += 1
            total += hits / rank
    return total / max(1, sum(rel))
