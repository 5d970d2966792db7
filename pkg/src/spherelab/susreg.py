"""Sliced uniformity loss, prototype invariance loss and a toy trainer.

Embeddings of one mini-batch are held as an array of shape ``(V_a, n, d)``:
``V_a`` views of ``n`` samples in ``d`` dimensions, the first ``v_g`` views
being the global ones.  The trainer optimizes free embedding rows directly;
there is no encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from spherelab.epps_pulley import EPConfig, ep_batch
from spherelab.errors import DegenerateInputError, InvalidArgumentError, TrainingError
from spherelab.rng import substream
from spherelab.sphere import UNIT_TOL, PointCloud
from spherelab.target import ProjectionTarget

# Coarse EP grid used while training.  For |x| <= 1 the trapezoid aliasing
# error of the 17-node grid is ~1e-6 relative, and it is ~8x cheaper than
# the 129-node default.
TRAIN_EP_CONFIG = EPConfig(quad_nodes=17)


@dataclass
class MultiViewBatch:
    """``V_a`` unit-norm views of the same ``n`` samples."""

    views: np.ndarray
    v_g: int = 1

    def __post_init__(self):
        views = self.views
        if isinstance(views, PointCloud):
            views = [views]
        if isinstance(views, (list, tuple)):
            views = np.stack([v.data if isinstance(v, PointCloud) else np.asarray(v, dtype=np.float64) for v in views])
        views = np.asarray(views, dtype=np.float64)
        if views.ndim == 2:
            views = views[None]
        if views.ndim != 3:
            raise InvalidArgumentError(f"views must have shape (V, n, d), got {views.shape}")
        if not 1 <= self.v_g <= views.shape[0]:
            raise InvalidArgumentError(f"need 1 <= v_g <= V_a, got v_g={self.v_g}, V_a={views.shape[0]}")
        if np.any(np.abs(np.linalg.norm(views, axis=2) - 1.0) > UNIT_TOL):
            raise InvalidArgumentError("every view row must be unit-norm")
        self.views = views

    @property
    def v_a(self) -> int:
        return self.views.shape[0]

    @property
    def n(self) -> int:
        return self.views.shape[1]

    @property
    def d(self) -> int:
        return self.views.shape[2]

    def rotated(self, q) -> "MultiViewBatch":
        return MultiViewBatch(self.views @ np.asarray(q).T, self.v_g)


@dataclass
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 0.5
    lam: float = 1.0
    num_slices: int = 1024
    seed: int = 0
    resample_slices_each_step: bool = True
    ep: EPConfig = field(default_factory=lambda: TRAIN_EP_CONFIG)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidArgumentError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.num_slices < 1:
            raise InvalidArgumentError("num_slices must be >= 1")
        if self.steps < 0:
            raise InvalidArgumentError("steps must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")


def _directions(directions, d: int) -> np.ndarray:
    a = directions.data if isinstance(directions, PointCloud) else np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if a.shape[1] != d:
        raise InvalidArgumentError(f"directions have dimension {a.shape[1]}, embeddings have {d}")
    if np.any(np.abs(np.linalg.norm(a, axis=1) - 1.0) > 1e-8):
        raise InvalidArgumentError("directions must be unit vectors")
    return a


def _check_lambda(lam):
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"lambda must lie in [0, 1], got {lam}")


def _susreg_parts(views, directions, target, cfg, want_grad):
    v_a, n, _ = views.shape
    n_dir = directions.shape[0]
    loss = 0.0
    grads = np.empty_like(views) if want_grad else None
    for v in range(v_a):
        proj = directions @ views[v].T
        if want_grad:
            ep, g = ep_batch(proj, target, cfg, grad=True)
            grads[v] = (g.T @ directions) / (n_dir * v_a)
        else:
            ep = ep_batch(proj, target, cfg)
        loss += ep.mean()
    return loss / v_a, grads


def susreg_loss(batch: MultiViewBatch, directions, target: ProjectionTarget, cfg: EPConfig = EPConfig()) -> float:
    """Mean over views and directions of the EP discrepancy of the projections."""
    a = _directions(directions, batch.d)
    return float(_susreg_parts(batch.views, a, target, cfg, False)[0])


def prototype(batch: MultiViewBatch) -> np.ndarray:
    """Average of the global views (rows are generally not unit-norm)."""
    return batch.views[: batch.v_g].mean(axis=0)


def _invariance_parts(views, v_g, want_grad):
    v_a, n, _ = views.shape
    mu = views[:v_g].mean(axis=0)
    resid = mu[None] - views
    loss = float(np.sum(resid**2) / (v_a * n))
    if not want_grad:
        return loss, None
    grads = -2.0 * resid
    grads[:v_g] += (2.0 / v_g) * resid.sum(axis=0)[None]
    return loss, grads / (v_a * n)


def invariance_loss(batch: MultiViewBatch) -> float:
    """Mean over samples of ``(1/V_a) sum_v ||mu_n - z_{n,v}||^2``."""
    return _invariance_parts(batch.views, batch.v_g, False)[0]


def total_loss(batch: MultiViewBatch, directions, target: ProjectionTarget, cfg: EPConfig = EPConfig(), lam: float = 1.0) -> float:
    """``(1 - lam) * L_inv + lam * L_susreg``."""
    _check_lambda(lam)
    return (1.0 - lam) * invariance_loss(batch) + lam * susreg_loss(batch, directions, target, cfg)


def _objective(views, v_g, directions, target, cfg, lam, want_grad=True):
    """Losses and gradient with respect to the unit embeddings."""
    inv, g_inv = _invariance_parts(views, v_g, want_grad and lam < 1.0)
    sus, g_sus = _susreg_parts(views, directions, target, cfg, want_grad and lam > 0.0)
    total = (1.0 - lam) * inv + lam * sus
    if not want_grad:
        return inv, sus, total, None
    grad = np.zeros_like(views)
    if g_inv is not None:
        grad += (1.0 - lam) * g_inv
    if g_sus is not None:
        grad += lam * g_sus
    return inv, sus, total, grad


def _normalization_pullback(z, grad_unit):
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm embedding row")
    zt = z / norms
    radial = np.sum(grad_unit * zt, axis=-1, keepdims=True)
    return (grad_unit - radial * zt) / norms


def _raw_embeddings(batch, v_g):
    if isinstance(batch, MultiViewBatch):
        return batch.views, batch.v_g
    z = np.asarray(batch, dtype=np.float64)
    if z.ndim == 2:
        z = z[None]
    if z.ndim != 3:
        raise InvalidArgumentError(f"embeddings must have shape (V, n, d), got {z.shape}")
    v_g = 1 if v_g is None else int(v_g)
    if not 1 <= v_g <= z.shape[0]:
        raise InvalidArgumentError(f"need 1 <= v_g <= V_a, got v_g={v_g}")
    return z, v_g


def total_loss_gradient(
    batch, directions, target: ProjectionTarget, cfg: EPConfig = EPConfig(), lam: float = 1.0, v_g: int | None = None
) -> np.ndarray:
    """Gradient of :func:`total_loss` with respect to pre-normalization embeddings.

    ``batch`` is a :class:`MultiViewBatch` or a raw ``(V_a, n, d)`` array that
    need not be unit-norm (``v_g`` then gives the number of global views).
    The chain rule goes through ``z -> z / ||z||``, whose Jacobian is
    ``(I - z~ z~^T) / ||z||``, so every returned row is orthogonal to its
    embedding.

    Raises
    ------
    DegenerateInputError
        If some embedding row is zero.
    """
    _check_lambda(lam)
    z, v_g = _raw_embeddings(batch, v_g)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm embedding row")
    views = z / norms
    a = _directions(directions, z.shape[2])
    _, _, _, g = _objective(views, v_g, a, target, cfg, lam)
    return _normalization_pullback(z, g)


def total_loss_raw(embeddings, directions, target, cfg: EPConfig = EPConfig(), lam: float = 1.0, v_g: int | None = None) -> float:
    """:func:`total_loss` evaluated on unnormalized embeddings."""
    z, v_g = _raw_embeddings(embeddings, v_g)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm embedding row")
    return total_loss(MultiViewBatch(z / norms, v_g), directions, target, cfg, lam)


def sample_directions(d: int, count: int, seed: int, step: int = 0) -> np.ndarray:
    g = substream(seed, "slices", d, step).standard_normal((count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def make_views(prototypes: PointCloud, v_a: int, v_g: int, noise: float, seed: int = 0) -> MultiViewBatch:
    """Synthetic views: each prototype plus tangent Gaussian noise, renormalized."""
    if v_a < 1:
        raise InvalidArgumentError("need at least one view")
    base = prototypes.data
    rng = substream(seed, "views", v_a, base.shape[0])
    views = []
    for _ in range(v_a):
        e = rng.standard_normal(base.shape) * noise
        e -= np.sum(e * base, axis=1, keepdims=True) * base
        z = base + e
        views.append(z / np.linalg.norm(z, axis=1, keepdims=True))
    return MultiViewBatch(np.stack(views), v_g)


@dataclass
class TrainResult:
    final: MultiViewBatch
    history: dict

    def final_cloud(self, view: int = 0) -> PointCloud:
        return PointCloud(self.final.views[view], on_sphere=True)


def train_toy(initial, cfg: TrainConfig, target: ProjectionTarget) -> TrainResult:
    """Plain gradient descent on free unit embeddings, renormalizing every step.

    ``history`` holds per-step arrays ``step, inv_loss, susreg_loss,
    total_loss, resultant_length`` measured before each update (plus the
    final state as the last row).

    Raises
    ------
    TrainingError
        When the loss or the embeddings become non-finite.
    """
    batch = initial if isinstance(initial, MultiViewBatch) else MultiViewBatch(initial, 1)
    views = batch.views.copy()
    v_g = batch.v_g
    d = batch.d
    rows = {k: [] for k in ("step", "inv_loss", "susreg_loss", "total_loss", "resultant_length")}
    directions = sample_directions(d, cfg.num_slices, cfg.seed, 0)
    for step in range(cfg.steps + 1):
        if cfg.resample_slices_each_step:
            directions = sample_directions(d, cfg.num_slices, cfg.seed, step)
        last = step == cfg.steps
        inv, sus, total, grad = _objective(views, v_g, directions, target, cfg.ep, cfg.lam, want_grad=not last)
        if not np.isfinite(total):
            raise TrainingError(step)
        rows["step"].append(step)
        rows["inv_loss"].append(inv)
        rows["susreg_loss"].append(sus)
        rows["total_loss"].append(total)
        rows["resultant_length"].append(float(np.mean(np.linalg.norm(views.mean(axis=1), axis=1))))
        if last:
            break
        # unit rows: the normalization Jacobian is the tangent projection
        grad -= np.sum(grad * views, axis=-1, keepdims=True) * views
        z = views - cfg.learning_rate * grad
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        if not np.all(np.isfinite(z)) or np.any(norms == 0.0):
            raise TrainingError(step, "embeddings became degenerate")
        # rows with zero gradient are already unit; leave them bit-identical
        moved = np.any(grad != 0.0, axis=-1, keepdims=True)
        views = np.where(moved, z / norms, views)
    history = {k: np.asarray(v) for k, v in rows.items()}
    return TrainResult(MultiViewBatch(views, v_g), history)


def smoothed(values, window: int) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    values = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(values.size)
    lo = np.maximum(0, idx - window + 1)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)
