"""Uniformity diagnostics and ranked-retrieval metrics.

Retrieval uses cosine similarity (the dot product of unit rows), excludes
each query from its own gallery and breaks similarity ties by gallery index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spherelab.epps_pulley import DEFAULT_CONFIG, EPConfig, ep_batch
from spherelab.errors import InvalidArgumentError
from spherelab.rng import substream
from spherelab.sphere import PointCloud
from spherelab.target import ProjectionTarget, select_target


def _rows(points) -> np.ndarray:
    return points.data if isinstance(points, PointCloud) else np.atleast_2d(np.asarray(points, dtype=np.float64))


def mean_resultant_length(points) -> float:
    """``||(1/n) sum_i x_i||``; 0 for balanced clouds, 1 for a collapsed one."""
    return float(np.linalg.norm(_rows(points).mean(axis=0)))


def ep_sweep(
    points,
    num_directions: int = 256,
    target: ProjectionTarget | None = None,
    cfg: EPConfig = DEFAULT_CONFIG,
    seed: int = 0,
    return_all: bool = False,
):
    """EP statistic along fresh uniform directions.

    Returns ``(median, p99)`` over directions, plus the per-direction values
    when ``return_all`` is set.
    """
    x = _rows(points)
    if num_directions < 1:
        raise InvalidArgumentError("num_directions must be >= 1")
    d = x.shape[1]
    target = select_target(d) if target is None else target
    g = substream(seed, "ep_sweep", d, num_directions).standard_normal((num_directions, d))
    a = g / np.linalg.norm(g, axis=1, keepdims=True)
    stats = ep_batch(a @ x.T, target, cfg)
    med, p99 = float(np.median(stats)), float(np.quantile(stats, 0.99))
    return (med, p99, stats) if return_all else (med, p99)


# -- retrieval ---------------------------------------------------------------------


@dataclass
class RetrievalBatch:
    """``B`` unit embeddings with instance labels; every label appears at least twice."""

    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        lab = np.asarray(self.labels).ravel()
        if e.shape[0] != lab.size:
            raise InvalidArgumentError(f"{e.shape[0]} embeddings but {lab.size} labels")
        if e.shape[0] < 2:
            raise InvalidArgumentError("a retrieval batch needs at least two items")
        _, counts = np.unique(lab, return_counts=True)
        if np.any(counts < 2):
            raise InvalidArgumentError("every query needs at least one positive in its batch")
        self.embeddings = e
        self.labels = lab

    @property
    def size(self) -> int:
        return self.labels.size


def _ranked_relevance(batch: RetrievalBatch) -> np.ndarray:
    """``(B, B-1)`` boolean relevance of each query's gallery in ranked order."""
    e, lab = batch.embeddings, batch.labels
    b = lab.size
    sim = e @ e.T
    idx = np.broadcast_to(np.arange(b), (b, b))
    # primary key -sim, secondary key index; self pushed to the end
    key = np.where(np.eye(b, dtype=bool), np.inf, -sim)
    order = np.lexsort((idx, key), axis=1)[:, :-1]
    return lab[order] == lab[:, None]


def recall_at_k(batch: RetrievalBatch, k: int) -> float:
    """Fraction of queries with a positive among their top ``k`` neighbours."""
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"K must be a positive integer, got {k}")
    rel = _ranked_relevance(batch)
    return float(np.mean(rel[:, : int(k)].any(axis=1)))


def average_precisions(batch: RetrievalBatch) -> np.ndarray:
    rel = _ranked_relevance(batch)
    hits = np.cumsum(rel, axis=1)
    ranks = np.arange(1, rel.shape[1] + 1)
    return np.sum(rel * hits / ranks, axis=1) / rel.sum(axis=1)


def mean_average_precision(batch: RetrievalBatch) -> float:
    """Mean over queries of the average precision of the ranked gallery."""
    return float(np.mean(average_precisions(batch)))


def split_batches(embeddings, labels, batch_size: int = 100) -> list[RetrievalBatch]:
    """Consecutive chunks of ``batch_size`` rows (the last one may be shorter)."""
    if batch_size < 2:
        raise InvalidArgumentError("batch size must be >= 2")
    e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    lab = np.asarray(labels).ravel()
    return [RetrievalBatch(e[i : i + batch_size], lab[i : i + batch_size]) for i in range(0, lab.size, batch_size)]


def evaluate_retrieval(embeddings, labels, batch_size: int = 100, ks=(1, 3, 5)) -> dict:
    """Recall@K and mAP averaged over queries of all batches."""
    batches = split_batches(embeddings, labels, batch_size)
    sizes = np.array([b.size for b in batches], dtype=np.float64)
    recall = {int(k): float(np.average([recall_at_k(b, k) for b in batches], weights=sizes)) for k in ks}
    m = float(np.average([mean_average_precision(b) for b in batches], weights=sizes))
    return {"recall": recall, "map": m}
