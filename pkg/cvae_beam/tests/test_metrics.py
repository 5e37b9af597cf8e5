import numpy as np
import pytest

from cvae_beam.errors import DomainError
from cvae_beam.metrics import (
    CdfCurve,
    cdf_frame,
    crossing_index,
    dominates,
    empirical_cdf,
    median,
    principal_angle,
    principal_angles,
)
from cvae_beam.tests.helpers import crandn


def test_angle_examples():
    assert principal_angle(np.array([1, 0]), np.array([0, 1])) == pytest.approx(90.0)
    assert principal_angle(np.array([1, 1]), np.array([1, 0])) == pytest.approx(45.0)
    assert principal_angle(np.array([1.0, 2.0j]), np.array([1.0, 2.0j])) == pytest.approx(0.0, abs=1e-7)


def test_angle_ignores_complex_scaling(rng):
    h, c = crandn(rng, 5), crandn(rng, 5)
    base = principal_angle(h, c)
    assert principal_angle(h, -3.0j * c) == pytest.approx(base, abs=1e-9)
    assert principal_angle(0.2 * h, c) == pytest.approx(base, abs=1e-9)
    assert principal_angle(h, np.exp(1.3j) * h) == pytest.approx(0.0, abs=1e-6)


def test_angles_are_symmetric_and_bounded(rng):
    A, B = crandn(rng, 100, 6), crandn(rng, 100, 6)
    ab, ba = principal_angles(A, B), principal_angles(B, A)
    assert np.array_equal(ab, ba)
    assert np.all((ab >= 0) & (ab <= 90))


def test_small_angle_accuracy(rng):
    h = crandn(rng, 8)
    h /= np.linalg.norm(h)
    d = crandn(rng, 8)
    d -= np.vdot(h, d) * h
    d /= np.linalg.norm(d)
    theta = 1e-7
    c = np.cos(theta) * h + np.sin(theta) * d
    assert np.deg2rad(principal_angle(h, c)) == pytest.approx(theta, rel=1e-5)


def test_zero_vector_rejected():
    with pytest.raises(DomainError):
        principal_angle(np.zeros(3), np.ones(3))


def test_empirical_cdf_steps():
    cdf = empirical_cdf([3.0, 1.0, 2.0, 2.0])
    assert cdf.grid.tolist() == [1.0, 2.0, 2.0, 3.0]
    assert cdf.at(0.5) == 0.0
    assert cdf.at(1.0) == 0.25
    assert cdf.at(2.5) == 0.75
    assert cdf.at(10.0) == 1.0


def test_empirical_cdf_on_grid():
    cdf = empirical_cdf([1.0, 2.0, 3.0, 4.0], grid=[0.0, 2.0, 5.0])
    assert cdf.values.tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(DomainError):
        empirical_cdf([])


def test_cdf_curve_validation():
    with pytest.raises(DomainError):
        CdfCurve(grid=np.array([1.0, 0.0]), values=np.array([0.5, 1.0]))
    with pytest.raises(DomainError):
        CdfCurve(grid=np.array([0.0, 1.0]), values=np.array([0.8, 0.5]))


def test_dominates():
    good = empirical_cdf([1.0, 2.0, 3.0])
    bad = empirical_cdf([2.0, 3.0, 4.0])
    assert dominates(good, bad, cutoff=10.0)
    assert not dominates(bad, good, cutoff=10.0)
    assert dominates(bad, good, cutoff=0.5)


def test_median_and_crossing():
    assert median([4.0, 1.0, 3.0]) == 3.0
    assert crossing_index([1, 2, 5], [2, 3, 4]) == 2
    assert crossing_index([3, 4], [1, 2]) is None
    assert crossing_index([1, 1], [2, 2]) is None


def test_cdf_frame_layout():
    frame = cdf_frame({"a": empirical_cdf([1.0, 2.0]), "b": empirical_cdf([0.5])})
    assert list(frame.columns) == ["grid_value", "cdf_value", "series_label"]
    assert frame["series_label"].tolist() == ["a", "a", "b"]
