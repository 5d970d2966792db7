"""Sampling and elementary geometry on the unit sphere S^{d-1}.

Point sets are stored as ``(n, d)`` arrays wrapped in :class:`PointCloud`.
All samplers take an integer ``seed`` and draw from a dedicated substream,
so identical arguments give bitwise-identical output.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from spherelab.errors import DegenerateInputError, InvalidArgumentError
from spherelab.rng import substream

UNIT_TOL = 1e-10


@dataclass
class PointCloud:
    """``n`` points in ``R^d``; ``on_sphere`` asserts unit rows."""

    data: np.ndarray
    on_sphere: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidArgumentError(f"point cloud must be 2-D, got shape {data.shape}")
        n, d = data.shape
        if n < 1 or d < 2:
            raise InvalidArgumentError(f"need n >= 1 and d >= 2, got n={n}, d={d}")
        self.data = data
        if self.on_sphere and not self.is_on_sphere():
            raise InvalidArgumentError("rows are not unit-norm within tolerance")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def is_on_sphere(self, tol: float = UNIT_TOL) -> bool:
        """Check the unit-norm invariant row by row."""
        norms = np.linalg.norm(self.data, axis=1)
        return bool(np.all(np.abs(norms - 1.0) <= tol))

    def rotated(self, q: np.ndarray) -> "PointCloud":
        return PointCloud(self.data @ np.asarray(q).T, on_sphere=self.on_sphere)


@dataclass(frozen=True)
class RadialLaw:
    """Discrete law of the radius ``R`` in ``X = R U``."""

    atoms: tuple = field(default=((1.0, 1.0),))

    def __post_init__(self):
        atoms = tuple((float(r), float(w)) for r, w in self.atoms)
        if not atoms:
            raise InvalidArgumentError("radial law needs at least one atom")
        radii = np.array([r for r, _ in atoms])
        weights = np.array([w for _, w in atoms])
        if np.any(radii < 0):
            raise InvalidArgumentError("radii must be non-negative")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("atom probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def radii(self) -> np.ndarray:
        return np.array([r for r, _ in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    def second_moment(self) -> float:
        return float(np.sum(self.weights * self.radii**2))

    def is_identity(self) -> bool:
        return self.atoms == ((1.0, 1.0),)


def _check_count(n: int):
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"sample count must be a positive integer, got {n}")


def _check_dim(d: int):
    if int(d) != d or d < 2:
        raise InvalidArgumentError(f"dimension must be an integer >= 2, got {d}")


def _unit(v, name="direction") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise InvalidArgumentError(f"{name} must have unit norm, got {np.linalg.norm(v)!r}")
    return v


def normalize(z) -> PointCloud:
    """Divide every row by its Euclidean norm.

    Raises
    ------
    DegenerateInputError
        If any row is the zero vector (its direction is undefined).
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms.ravel() == 0.0)[0])
        raise DegenerateInputError(f"row {bad} is the zero vector; cannot normalize")
    return PointCloud(z / norms, on_sphere=True)


def _uniform_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_uniform_sphere(d: int, n: int, seed: int = 0) -> PointCloud:
    """I.i.d. uniform points on S^{d-1} via normalized Gaussian rows."""
    _check_dim(d)
    _check_count(n)
    rng = substream(seed, "uniform_sphere", d, n)
    return PointCloud(_uniform_rows(rng, n, d), on_sphere=True)


def _wood_cosines(rng: np.random.Generator, kappa: float, d: int, n: int) -> np.ndarray:
    """Draw ``w = mu^T x`` for ``x ~ vMF(mu, kappa)`` on S^{d-1} (Wood, 1994)."""
    dm1 = d - 1.0
    # stable form of b = (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1)
    b = dm1 / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + dm1**2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + dm1 * np.log(1.0 - x0**2)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(16, int(1.2 * (n - filled)))
        z = rng.beta(dm1 / 2.0, dm1 / 2.0, size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=m)
        keep = w[kappa * w + dm1 * np.log(1.0 - x0 * w) - c >= np.log(u)]
        take = min(keep.size, n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def _vmf_rows(rng: np.random.Generator, mu: np.ndarray, kappa: float, n: int) -> np.ndarray:
    d = mu.size
    w = _wood_cosines(rng, kappa, d, n)
    v = rng.standard_normal((n, d))
    v -= np.outer(v @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = w[:, None] * mu[None, :] + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * v
    # remove O(eps) drift so the on-sphere invariant holds to 1e-10
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_vmf(mean_direction, kappa: float, n: int, seed: int = 0) -> PointCloud:
    """Von Mises-Fisher samples on S^{d-1}; ``kappa = 0`` gives the uniform law."""
    mu = _unit(mean_direction, "mean_direction")
    _check_dim(mu.size)
    _check_count(n)
    if not np.isfinite(kappa) or kappa < 0:
        raise InvalidArgumentError(f"kappa must be finite and >= 0, got {kappa}")
    rng = substream(seed, "vmf", mu.size, n)
    return PointCloud(_vmf_rows(rng, mu, float(kappa), n), on_sphere=True)


def sample_vmf_mixture(components: Sequence, n: int, seed: int = 0) -> PointCloud:
    """Mixture of vMF laws given as ``[(mu_i, kappa_i, w_i), ...]``.

    Each row is drawn from component ``i`` with probability ``w_i``; rows keep
    the order in which component labels were drawn.
    """
    components = list(components)
    if not components:
        raise InvalidArgumentError("mixture needs at least one component")
    _check_count(n)
    mus = [_unit(c[0], "component mean") for c in components]
    d = mus[0].size
    if any(m.size != d for m in mus):
        raise InvalidArgumentError("all component means must share a dimension")
    kappas = [float(c[1]) for c in components]
    if any(k < 0 or not np.isfinite(k) for k in kappas):
        raise InvalidArgumentError("component concentrations must be finite and >= 0")
    weights = np.array([float(c[2]) for c in components])
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError("mixture weights must be non-negative and sum to 1")
    if len(components) == 1:
        return sample_vmf(mus[0], kappas[0], n, seed)
    labels = substream(seed, "vmf_mixture_labels", d, n).choice(
        len(components), size=n, p=weights / weights.sum()
    )
    out = np.empty((n, d))
    for i, (mu, kappa) in enumerate(zip(mus, kappas)):
        idx = np.flatnonzero(labels == i)
        if idx.size:
            rng = substream(seed, "vmf_mixture", i, d, n)
            out[idx] = _vmf_rows(rng, mu, kappa, idx.size)
    return PointCloud(out, on_sphere=True)


def random_mixture_components(d: int, count: int, kappa: float, seed: int = 0):
    """Equal-weight vMF components with uniformly random mean directions."""
    means = _uniform_rows(substream(seed, "mixture_means", d, count), count, d)
    return [(m, kappa, 1.0 / count) for m in means]


def sample_radial(base: PointCloud, law: RadialLaw, seed: int = 0) -> PointCloud:
    """Scale each unit row of ``base`` by an independent radius drawn from ``law``."""
    if not base.on_sphere:
        raise InvalidArgumentError("radial scaling needs an on-sphere base cloud")
    if law.is_identity():
        return PointCloud(base.data.copy(), on_sphere=True)
    rng = substream(seed, "radial", base.n)
    r = rng.choice(law.radii, size=base.n, p=law.weights)
    return PointCloud(base.data * r[:, None], on_sphere=False)


def project(points: PointCloud, direction) -> np.ndarray:
    """Sliced variables ``t_i = a^T x_i`` for a unit direction ``a``."""
    a = np.asarray(direction, dtype=np.float64).ravel()
    if a.size != points.d:
        raise InvalidArgumentError(f"direction has dimension {a.size}, points have {points.d}")
    a = _unit(a)
    return points.data @ a


def random_orthogonal(d: int, seed: int = 0) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed)."""
    g = substream(seed, "orthogonal", d).standard_normal((d, d))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


# -- CSV serialization -----------------------------------------------------------


def cloud_to_csv(points, fh=None) -> str | None:
    """Write ``x0,...,x{d-1}`` CSV with 17 significant digits.

    Returns the text when ``fh`` is None.
    """
    data = points.data if isinstance(points, PointCloud) else np.atleast_2d(points)
    header = ",".join(f"x{i}" for i in range(data.shape[1]))
    buf = fh if fh is not None else io.StringIO()
    buf.write(header + "\n")
    np.savetxt(buf, data, fmt="%.17g", delimiter=",")
    if fh is None:
        return buf.getvalue()
    return None


def cloud_from_csv(path_or_fh, on_sphere: bool | None = None) -> PointCloud:
    """Read a cloud written by :func:`cloud_to_csv`.

    ``on_sphere=None`` infers the flag from the row norms.
    """
    data = np.loadtxt(path_or_fh, delimiter=",", skiprows=1, ndmin=2)
    cloud = PointCloud(data)
    if on_sphere is None:
        on_sphere = cloud.is_on_sphere()
    cloud.on_sphere = bool(on_sphere)
    if cloud.on_sphere and not cloud.is_on_sphere():
        raise InvalidArgumentError("CSV rows are not unit-norm")
    return cloud


def stack(clouds: Iterable[PointCloud]) -> np.ndarray:
    return np.stack([c.data for c in clouds])
