"""Gram spectra for the worst-case kernel ridge regression bias.

The covariance operator ``T_p g = int K(x, .) g(x) p(x) dvol`` is estimated by
the eigenvalues of ``Gram / B`` on ``B`` i.i.d. points.  With ``mu_1`` its top
eigenvalue, the worst-case integrated squared bias over the unit RKHS ball is
``h_lam(mu_1) = (mu_1 lam / (mu_1 + lam))^2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, eigvalsh
from scipy.sparse.linalg import ArpackError, eigsh

from spherelab.errors import InvalidArgumentError, NumericalError
from spherelab.rng import substream
from spherelab.sphere import PointCloud, RadialLaw, _uniform_rows, _vmf_rows, random_mixture_components
from spherelab.target import rho_expectation

EXPONENTIAL = "exponential"
LINEAR = "linear"

DEFAULT_LAMBDAS = (0.01, 0.1, 1.0)
MAX_DENSE = 5000
NEGATIVE_SLACK = -1e-8


@dataclass(frozen=True)
class KernelSpec:
    """``exp(kappa x.y)`` or the linear kernel ``x.y``."""

    kind: str = EXPONENTIAL
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, LINEAR):
            raise InvalidArgumentError(f"unknown kernel {self.kind!r}")
        if self.kind == EXPONENTIAL and not self.kappa > 0:
            raise InvalidArgumentError("kappa must be positive")

    @classmethod
    def exponential(cls, kappa: float = 1.0) -> "KernelSpec":
        return cls(EXPONENTIAL, float(kappa))

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(LINEAR, 0.0)

    def __call__(self, X, Y) -> np.ndarray:
        dots = np.atleast_2d(X) @ np.atleast_2d(Y).T
        return np.exp(self.kappa * dots) if self.kind == EXPONENTIAL else dots


def _points(points) -> np.ndarray:
    x = points.data if isinstance(points, PointCloud) else np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[0] < 1:
        raise InvalidArgumentError("need at least one point")
    return x


def gram(points, kernel: KernelSpec) -> np.ndarray:
    """Symmetric ``B x B`` Gram matrix ``K(x_i, x_j)``."""
    x = _points(points)
    K = kernel(x, x)
    return 0.5 * (K + K.T)


def worst_case_isb(mu1, lam):
    """``h_lam(mu) = (mu lam / (mu + lam))^2``; increasing in ``mu``, tends to ``lam^2``."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise InvalidArgumentError("lambda must be positive")
    mu1 = np.asarray(mu1, dtype=np.float64)
    if np.any(mu1 < 0):
        raise InvalidArgumentError("eigenvalues must be non-negative")
    out = (mu1 * lam / (mu1 + lam)) ** 2
    return float(out) if out.ndim == 0 else out


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    batch_size: int
    kernel: KernelSpec
    lambda_grid: tuple = DEFAULT_LAMBDAS
    worst_case_isb: dict = field(default_factory=dict)

    @property
    def mu1(self) -> float:
        return float(self.eigenvalues[0])


def _clamp(ev: np.ndarray) -> np.ndarray:
    low = ev.min() if ev.size else 0.0
    if low < NEGATIVE_SLACK:
        warnings.warn(f"clamping negative eigenvalue {low:.3e} to 0", RuntimeWarning, stacklevel=3)
    return np.maximum(ev, 0.0)


def covariance_spectrum(points, kernel: KernelSpec, top: int | None = None, lambda_grid=DEFAULT_LAMBDAS) -> SpectrumReport:
    """Descending eigenvalues of ``Gram / B``.

    ``top=None`` returns the full spectrum from a dense decomposition
    (``B <= 5000``); ``top=t`` returns only the leading ``t`` eigenvalues from
    a Lanczos solver.

    Raises
    ------
    NumericalError
        When the eigensolver fails; the message carries a condition estimate.
    """
    x = _points(points)
    B = x.shape[0]
    if B < 2:
        raise InvalidArgumentError("need B >= 2")
    M = gram(x, kernel) / B
    try:
        if top is None or top >= B - 1:
            if B > MAX_DENSE:
                raise InvalidArgumentError(f"dense spectra are limited to B <= {MAX_DENSE}")
            ev = eigvalsh(M)[::-1]
        else:
            ev = eigsh(M, k=int(top), which="LA", v0=np.ones(B), return_eigenvectors=False)
            ev = np.sort(ev)[::-1]
    except (LinAlgError, ArpackError) as exc:
        cond = np.linalg.cond(M)
        raise NumericalError(f"eigensolver failed ({exc}); condition number {cond:.3e}") from exc
    ev = _clamp(ev)
    isb = {float(lam): worst_case_isb(ev[0], lam) for lam in lambda_grid}
    return SpectrumReport(ev, B, kernel, tuple(lambda_grid), isb)


def isb_spectral_bruteforce(eigenvalues, lam: float, trials: int = 1000, seed: int = 0) -> float:
    """Sup of ``sum_j h_j a_j^2`` over unit coefficient vectors ``a``.

    Candidates are every coordinate basis vector plus ``trials`` random unit
    vectors; the per-coordinate values use :func:`worst_case_isb` itself so
    the basis vector of the top eigenvalue reproduces ``h_lam(mu_1)`` exactly.
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    mu = np.asarray(eigenvalues, dtype=np.float64).ravel()
    h = np.atleast_1d(worst_case_isb(mu, lam))
    best = float(h.max())
    a = substream(seed, "isb_bruteforce", mu.size).standard_normal((trials, mu.size))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    return max(best, float(np.max((a**2) @ h)))


# -- sampling specs -------------------------------------------------------------------


@dataclass(frozen=True)
class DistributionSpec:
    """Sampling law on or around S^{d-1}.

    ``kind`` is ``uniform``, ``point`` (all mass at ``e_1``), ``vmf``
    (equal-weight mixture of ``components`` vMF laws whose random means are
    fixed by ``mean_seed``) or ``radial`` (uniform directions scaled by a
    discrete radius law with unit second moment).
    """

    kind: str
    kappa: float = 0.0
    components: int = 1
    law: RadialLaw | None = None
    mean_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "vmf", "radial", "point"):
            raise InvalidArgumentError(f"unknown distribution {self.kind!r}")
        if self.kind == "radial":
            if self.law is None or abs(self.law.second_moment() - 1.0) > 1e-9:
                raise InvalidArgumentError("radial laws must satisfy E[R^2] = 1")
        if self.kind == "vmf" and (self.kappa < 0 or self.components < 1):
            raise InvalidArgumentError("vmf needs kappa >= 0 and at least one component")

    @property
    def label(self) -> str:
        if self.kind == "vmf":
            return f"vmf:{self.kappa:g}:{self.components}"
        if self.kind == "radial":
            return "radial:" + ",".join(f"{r:g}@{w:g}" for r, w in self.law.atoms)
        return self.kind

    def sample(self, d: int, B: int, seed: int = 0) -> np.ndarray:
        rng = substream(seed, "krr_sample", self.label, d, B)
        if self.kind == "uniform":
            return _uniform_rows(rng, B, d)
        if self.kind == "point":
            x = np.zeros((B, d))
            x[:, 0] = 1.0
            return x
        if self.kind == "radial":
            r = rng.choice(self.law.radii, size=B, p=self.law.weights)
            return _uniform_rows(rng, B, d) * r[:, None]
        comps = random_mixture_components(d, self.components, self.kappa, self.mean_seed)
        labels = rng.integers(self.components, size=B)
        out = np.empty((B, d))
        for i, (mu, kappa, _) in enumerate(comps):
            idx = np.flatnonzero(labels == i)
            if idx.size:
                out[idx] = _vmf_rows(rng, mu, kappa, idx.size)
        return out


def parse_distribution(text: str) -> DistributionSpec:
    """Parse ``uniform``, ``point``, ``vmf:KAPPA[:COMPONENTS]`` or ``radial:R1@W1,R2@W2,...``."""
    head, _, rest = text.strip().partition(":")
    try:
        if head in ("uniform", "point") and not rest:
            return DistributionSpec(head)
        if head == "vmf":
            parts = rest.split(":")
            comps = int(parts[1]) if len(parts) > 1 else 1
            return DistributionSpec("vmf", kappa=float(parts[0]), components=comps)
        if head == "radial":
            atoms = []
            for item in rest.split(","):
                r, w = item.split("@")
                atoms.append((float(r), float(w)))
            return DistributionSpec("radial", law=RadialLaw(tuple(atoms)))
    except (ValueError, IndexError) as exc:
        raise InvalidArgumentError(f"cannot parse distribution {text!r}: {exc}") from exc
    raise InvalidArgumentError(f"cannot parse distribution {text!r}")


# -- comparisons ----------------------------------------------------------------------


@dataclass
class TopEigenRow:
    distribution: str
    d: int
    mu1_mean: float
    mu1_stderr: float
    samples: np.ndarray


def top_eigenvalue_samples(dist: DistributionSpec, d: int, kernel: KernelSpec, B: int, reps: int, seed: int = 0) -> np.ndarray:
    out = np.empty(reps)
    for r in range(reps):
        x = dist.sample(d, B, seed=int(substream(seed, "krr_rep", r).integers(2**62)))
        out[r] = covariance_spectrum(x, kernel, top=1).mu1
    return out


def compare_top_eigenvalue(distributions, kernel: KernelSpec, B: int, reps: int, d: int = 2, seed: int = 0) -> list[TopEigenRow]:
    """Mean and standard error of ``mu_1`` over ``reps`` independent batches per distribution."""
    if reps < 2:
        raise InvalidArgumentError("reps must be >= 2")
    rows = []
    for dist in distributions:
        dist = parse_distribution(dist) if isinstance(dist, str) else dist
        s = top_eigenvalue_samples(dist, d, kernel, B, reps, seed)
        rows.append(TopEigenRow(dist.label, d, float(s.mean()), float(s.std(ddof=1) / np.sqrt(reps)), s))
    return rows


def linear_probe_top_eig(points) -> float:
    """Top eigenvalue of the second-moment matrix ``(1/B) sum_i x_i x_i^T``."""
    x = _points(points)
    if x.shape[0] < 2:
        raise InvalidArgumentError("need B >= 2")
    return float(np.linalg.eigvalsh(x.T @ x / x.shape[0])[-1])


def uniform_mean_kernel(d: int, kappa: float = 1.0) -> float:
    """``g_d(1) = E[exp(kappa U.V)]`` for independent uniform ``U, V`` on S^{d-1}."""
    return rho_expectation(d, lambda t: np.exp(kappa * t))


def mean_kernel_check(points, kernel: KernelSpec) -> tuple[float, float]:
    """U-statistic of ``E[K(X, Y)]`` over distinct pairs with its standard error.

    The standard error uses the Hoeffding projection, ``4 Var(h_1) / B``.
    """
    x = _points(points)
    B = x.shape[0]
    if B < 3:
        raise InvalidArgumentError("need B >= 3")
    K = gram(x, kernel)
    off = K.sum(axis=1) - np.diag(K)
    est = float(off.sum() / (B * (B - 1)))
    h1 = off / (B - 1)
    return est, float(np.sqrt(4.0 * h1.var(ddof=1) / B))
