import numpy as np
import pytest

import oracles
from spherelab.epps_pulley import ep_batch
from spherelab.errors import InvalidArgumentError
from spherelab.metrics import (
    RetrievalBatch,
    average_precisions,
    ep_sweep,
    evaluate_retrieval,
    mean_average_precision,
    mean_resultant_length,
    recall_at_k,
)
from spherelab.sphere import random_mixture_components, random_orthogonal, sample_uniform_sphere, sample_vmf_mixture
from spherelab.target import ProjectionTarget


def _random_pairs(b, d, seed):
    x = sample_uniform_sphere(d, b, seed=seed).data
    return RetrievalBatch(x, np.repeat(np.arange(b // 2), 2))


def test_mean_resultant_length_examples():
    assert mean_resultant_length(np.tile([0.0, 1.0, 0.0], (5, 1))) == pytest.approx(1.0)
    assert mean_resultant_length([[1.0, 0.0], [-1.0, 0.0]]) == 0.0
    assert mean_resultant_length(sample_uniform_sphere(16, 10_000, seed=0)) < 0.03


def test_ep_sweep_null_separation_and_rotation():
    d, n = 16, 4096
    tgt = ProjectionTarget.exact(d)
    null_meds = [ep_sweep(sample_uniform_sphere(d, n, seed=10 + r), 64, tgt, seed=r)[0] for r in range(40)]
    med, p99 = ep_sweep(sample_uniform_sphere(d, n, seed=1), 64, tgt, seed=2)
    assert med <= max(null_meds) and p99 >= med
    vmf = sample_vmf_mixture(random_mixture_components(d, 1, 20.0, seed=0), n, seed=3)
    assert ep_sweep(vmf, 64, tgt, seed=2)[0] > 5 * np.median(null_meds)

    # joint rotation of cloud and directions leaves every statistic unchanged
    x = sample_uniform_sphere(d, 500, seed=4).data
    q = random_orthogonal(d, seed=5)
    _, _, s = ep_sweep(x, 32, tgt, seed=6, return_all=True)
    a = sample_uniform_sphere(d, 32, seed=7).data
    np.testing.assert_allclose(ep_batch((a @ q.T) @ (x @ q.T).T, tgt), ep_batch(a @ x.T, tgt), rtol=1e-10)
    assert s.shape == (32,)


def test_batch_validation():
    with pytest.raises(InvalidArgumentError):
        RetrievalBatch(np.eye(3), [0, 0, 1])
    with pytest.raises(InvalidArgumentError):
        RetrievalBatch(np.eye(3), [0, 0])


def test_duplicate_positives_are_perfect():
    x = sample_uniform_sphere(8, 10, seed=0).data
    b = RetrievalBatch(np.repeat(x, 2, axis=0), np.repeat(np.arange(10), 2))
    assert recall_at_k(b, 1) == 1.0
    assert mean_average_precision(b) == 1.0


def test_orthogonal_positives_identical_negatives():
    e = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    b = RetrievalBatch(e, [0, 0, 1, 1])
    assert recall_at_k(b, 1) == 0.0


def test_single_positive_at_rank_r():
    e = np.array([[1.0, 0.0], [0.9, np.sqrt(0.19)], [0.8, 0.6], [0.0, 1.0], [0.5, -np.sqrt(0.75)]])
    b = RetrievalBatch(e, [0, 1, 1, 0, 1])
    # query 0 ranks its only positive (row 3) last among the four others
    assert average_precisions(b)[0] == pytest.approx(1 / 4)


def test_ap_matches_bruteforce_with_ties():
    rng = np.random.default_rng(1)
    e = rng.choice([-1.0, 1.0], size=(12, 3)) / np.sqrt(3)  # many exact ties
    lab = np.repeat(np.arange(4), 3)
    b = RetrievalBatch(e, lab)
    sims = e @ e.T
    expect = []
    for q in range(12):
        others = [j for j in range(12) if j != q]
        expect.append(oracles.average_precision_bruteforce([sims[q, j] for j in others], [lab[j] == lab[q] for j in others]))
    np.testing.assert_allclose(average_precisions(b), expect, rtol=1e-14)


def test_recall_monotone_rotation_and_bounds():
    b = _random_pairs(100, 16, seed=3)
    rec = [recall_at_k(b, k) for k in range(1, 20)]
    assert np.all(np.diff(rec) >= 0)
    q = random_orthogonal(16, seed=4)
    rb = RetrievalBatch(b.embeddings @ q.T, b.labels)
    m = mean_average_precision(b)
    assert mean_average_precision(rb) == pytest.approx(m, rel=1e-12)
    assert recall_at_k(rb, 5) == recall_at_k(b, 5)
    assert recall_at_k(b, 1) / 99 <= m <= 1
    with pytest.raises(InvalidArgumentError):
        recall_at_k(b, 0)


def test_random_recall_at_1():
    vals = [recall_at_k(_random_pairs(100, 32, seed=s), 1) for s in range(200)]
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - 1 / 99) < 3 * se + 1e-12


def test_evaluate_retrieval_weights_by_batch_size():
    e = sample_uniform_sphere(8, 150, seed=5).data
    lab = np.repeat(np.arange(75), 2)
    out = evaluate_retrieval(e, lab, batch_size=100, ks=(1, 3))
    b1, b2 = RetrievalBatch(e[:100], lab[:100]), RetrievalBatch(e[100:], lab[100:])
    expect = (100 * mean_average_precision(b1) + 50 * mean_average_precision(b2)) / 150
    assert out["map"] == pytest.approx(expect, rel=1e-14)
    assert set(out["recall"]) == {1, 3}
