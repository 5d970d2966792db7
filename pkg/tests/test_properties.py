import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spherelab.epps_pulley import ep_statistic, ep_statistic_gaussian_closed_form
from spherelab.knn_lab import IsbConstant, Manifold, knn_regress
from spherelab.krr_lab import worst_case_isb
from spherelab.metrics import RetrievalBatch, recall_at_k
from spherelab.sphere import normalize
from spherelab.target import ProjectionTarget

finite = st.floats(-3.0, 3.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.integers(2, 40))
def test_ep_is_nonnegative(x, d):
    assert ep_statistic(x, ProjectionTarget.exact(d)) >= 0.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(0.05, 4.0), st.floats(0.2, 3.0))
def test_gaussian_closed_form_nonnegative_and_permutation_invariant(x, s2, v):
    a = ep_statistic_gaussian_closed_form(x, s2, v)
    assert a >= -1e-12
    b = ep_statistic_gaussian_closed_form(x[::-1].copy(), s2, v)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@given(st.floats(0.0, 1e3), st.floats(0.0, 1e3), st.floats(1e-3, 1e2))
def test_h_lambda_monotone(a, b, lam):
    lo, hi = sorted((a, b))
    if hi > lo * (1 + 1e-9) + 1e-12:
        assert worst_case_isb(hi, lam) > worst_case_isb(lo, lam)
    assert worst_case_isb(hi, lam) <= lam**2


@given(st.integers(1, 1000), st.integers(1, 10**6), st.sampled_from([1, 2, 3, 4]))
def test_isb_constant_homogeneous(k, n, m):
    a = IsbConstant(m, k, n).value
    assert a > 0
    assert abs(IsbConstant(m, 2 * k, 2 * n).value / a - 1) < 1e-13


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 20))
def test_knn_regress_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 3))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = rng.normal(size=25)
    q = X[0] + 0.1 * rng.normal(size=3)
    q /= np.linalg.norm(q)
    perm = rng.permutation(25)
    man = Manifold.sphere2()
    a = knn_regress(q, X, y, k, man)
    b = knn_regress(q, X[perm], y[perm], k, man)
    assert abs(a - b) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_recall_nondecreasing(seed):
    rng = np.random.default_rng(seed)
    e = normalize(rng.normal(size=(20, 4))).data
    b = RetrievalBatch(e, np.repeat(np.arange(10), 2))
    r = [recall_at_k(b, k) for k in range(1, 20)]
    assert all(x <= y for x, y in zip(r, r[1:]))
    assert r[-1] == 1.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(2, 6)), elements=finite))
def test_normalize_unit_rows(z):
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-6):
        return
    np.testing.assert_allclose(np.linalg.norm(normalize(z).data, axis=1), 1.0, atol=1e-12)
