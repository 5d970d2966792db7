import io

import numpy as np
import pytest

from spherelab.errors import DegenerateInputError, InvalidArgumentError
from spherelab.sphere import (
    PointCloud,
    RadialLaw,
    cloud_from_csv,
    cloud_to_csv,
    normalize,
    project,
    random_mixture_components,
    random_orthogonal,
    sample_radial,
    sample_uniform_sphere,
    sample_vmf,
    sample_vmf_mixture,
)


def test_pointcloud_validation():
    with pytest.raises(InvalidArgumentError):
        PointCloud(np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        PointCloud(np.zeros((3, 1)))
    with pytest.raises(InvalidArgumentError):
        PointCloud(np.ones((2, 2)), on_sphere=True)
    assert PointCloud(np.eye(3), on_sphere=True).is_on_sphere()


def test_normalize_and_zero_row():
    out = normalize([[3.0, 4.0], [0.0, -2.0]])
    np.testing.assert_allclose(out.data, [[0.6, 0.8], [0.0, -1.0]])
    with pytest.raises(DegenerateInputError):
        normalize([[1.0, 0.0], [0.0, 0.0]])


def test_uniform_sampler_is_unit_and_deterministic():
    a = sample_uniform_sphere(5, 1000, seed=3)
    b = sample_uniform_sphere(5, 1000, seed=3)
    assert a.is_on_sphere()
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, sample_uniform_sphere(5, 1000, seed=4).data)


def test_uniform_second_moment_is_isotropic():
    x = sample_uniform_sphere(4, 200_000, seed=0).data
    np.testing.assert_allclose(x.T @ x / x.shape[0], np.eye(4) / 4, atol=3e-3)


def test_vmf_mean_resultant_matches_bessel_ratio():
    from scipy.special import ive

    d, kappa = 3, 5.0
    mu = np.array([0.0, 1.0, 0.0])
    x = sample_vmf(mu, kappa, 100_000, seed=1).data
    expected = ive(d / 2, kappa) / ive(d / 2 - 1, kappa)
    assert abs((x @ mu).mean() - expected) < 5e-3


def test_vmf_zero_kappa_is_uniform():
    x = sample_vmf(np.array([1.0, 0.0, 0.0]), 0.0, 50_000, seed=2).data
    assert np.linalg.norm(x.mean(axis=0)) < 0.02


def test_vmf_rejects_bad_arguments():
    with pytest.raises(InvalidArgumentError):
        sample_vmf([1.0, 1.0], 1.0, 10)
    with pytest.raises(InvalidArgumentError):
        sample_vmf([1.0, 0.0], -1.0, 10)


def test_mixture_weights_and_means():
    comps = random_mixture_components(8, 3, 50.0, seed=0)
    x = sample_vmf_mixture(comps, 30_000, seed=0).data
    means = np.array([c[0] for c in comps])
    nearest = np.argmax(x @ means.T, axis=1)
    frac = np.bincount(nearest, minlength=3) / x.shape[0]
    np.testing.assert_allclose(frac, 1 / 3, atol=0.02)
    with pytest.raises(InvalidArgumentError):
        sample_vmf_mixture([(means[0], 1.0, 0.4)], 10)


def test_radial_law():
    law = RadialLaw(((0.5, 0.5), (np.sqrt(1.75), 0.5)))
    assert law.second_moment() == pytest.approx(1.0)
    base = sample_uniform_sphere(3, 2000, seed=0)
    x = sample_radial(base, law, seed=0)
    r = np.linalg.norm(x.data, axis=1)
    assert set(np.round(r, 12)) == {0.5, round(np.sqrt(1.75), 12)}
    assert not x.on_sphere
    with pytest.raises(InvalidArgumentError):
        RadialLaw(((1.0, 0.6),))


def test_project_and_orthogonal():
    q = random_orthogonal(6, seed=1)
    np.testing.assert_allclose(q @ q.T, np.eye(6), atol=1e-12)
    pts = sample_uniform_sphere(6, 50, seed=0)
    a = np.eye(6)[2]
    np.testing.assert_allclose(project(pts, a), pts.data[:, 2])
    np.testing.assert_allclose(project(pts.rotated(q), q @ a), project(pts, a), atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        project(pts, np.ones(6))


def test_csv_round_trip_is_exact():
    pts = sample_uniform_sphere(3, 20, seed=9)
    text = cloud_to_csv(pts)
    assert text.splitlines()[0] == "x0,x1,x2"
    back = cloud_from_csv(io.StringIO(text))
    assert back.on_sphere
    assert np.array_equal(back.data, pts.data)
