import numpy as np
import pytest
from scipy.special import j0

from cvae_beam.channel import (
    ChannelConfig,
    ChannelDataset,
    generate_channel_set,
    jakes_gains,
    steering_vector,
    ue_mean_angles,
)
from cvae_beam.errors import ConfigError, DomainError
from cvae_beam.metrics import principal_angles


def test_steering_vector_broadside():
    assert np.allclose(steering_vector(0.0, 4), [0.5, 0.5, 0.5, 0.5])


def test_steering_vector_endfire():
    a = steering_vector(90.0, 2)
    assert np.allclose(a, [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-12)


def test_steering_vector_unit_norm():
    a = steering_vector(30.0, 8)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert abs(np.vdot(a, a)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("angle", [-90.5, 91.0, np.nan])
def test_steering_vector_rejects_bad_angles(angle):
    with pytest.raises(DomainError):
        steering_vector(angle, 4)


@pytest.mark.parametrize("field,value", [("n_antennas", 0), ("n_ues", 0), ("n_paths", 0),
                                         ("normalized_doppler", 0.6), ("normalized_doppler", -0.1)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        ChannelConfig(**{field: value})


def test_mean_angles_span():
    angles = ue_mean_angles(4)
    assert angles[0] == -60.0 and angles[-1] == 60.0
    assert np.all(np.diff(angles) > 0)
    assert ue_mean_angles(1).tolist() == [0.0]


def test_generation_is_deterministic():
    cfg = ChannelConfig(n_antennas=8, n_ues=3, n_snapshots=300, rng_seed=11)
    a = generate_channel_set(cfg)
    b = generate_channel_set(cfg)
    assert np.array_equal(a.h, b.h)
    assert not np.array_equal(a.h, generate_channel_set(ChannelConfig(n_antennas=8, n_ues=3, n_snapshots=300,
                                                                      rng_seed=12)).h)


def test_dataset_shape_and_counts():
    ds = generate_channel_set(ChannelConfig(n_antennas=8, n_ues=3, n_snapshots=50))
    assert ds.h.shape == (3, 50, 8)
    assert len(ds) == 150
    assert len(list(ds.snapshots())) == 150
    snap = ds.snapshot(2, 7)
    assert (snap.ue_index, snap.time_index) == (2, 7)
    assert np.linalg.norm(snap.h) > 0
    assert not ds.h.flags.writeable


def test_zero_doppler_freezes_time():
    ds = generate_channel_set(ChannelConfig(n_antennas=8, n_ues=2, n_snapshots=20, normalized_doppler=0.0))
    assert np.allclose(ds.h, ds.h[:, :1, :], atol=1e-12)


def test_single_path_is_rank_one():
    ds = generate_channel_set(ChannelConfig(n_antennas=8, n_ues=2, n_snapshots=100, n_paths=1,
                                            angle_spread_deg=0.0))
    for ue in range(2):
        ref = np.broadcast_to(ds.h[ue, 0], ds.h[ue].shape)
        assert np.max(np.deg2rad(principal_angles(ds.h[ue], ref))) <= 1e-9


def test_average_power_is_normalized():
    ds = generate_channel_set(ChannelConfig(n_antennas=16, n_ues=4, n_snapshots=5000, rng_seed=3))
    ratio = np.mean(np.sum(np.abs(ds.h) ** 2, axis=-1)) / 16
    assert 0.9 <= ratio <= 1.1


def test_jakes_autocorrelation_matches_bessel():
    f_d = 0.278
    g = jakes_gains(np.random.default_rng(5), n_paths=8, n_snapshots=10_000, normalized_doppler=f_d)
    assert g.shape == (8, 10_000)
    for path in g:
        power = np.mean(np.abs(path) ** 2)
        for tau in range(1, 6):
            r = np.real(np.mean(path[tau:] * np.conj(path[:-tau]))) / power
            assert r == pytest.approx(j0(2 * np.pi * f_d * tau), abs=0.1)


def test_channel_lag_one_correlation():
    f_d = 0.278
    ds = generate_channel_set(ChannelConfig(n_antennas=8, n_ues=2, n_snapshots=10_000,
                                            normalized_doppler=f_d, rng_seed=9))
    x = ds.h[0].real
    r = np.mean(x[1:] * x[:-1]) / np.mean(x ** 2)
    assert r == pytest.approx(j0(2 * np.pi * f_d), abs=0.1)


def test_gains_prefix_does_not_depend_on_length():
    short = jakes_gains(np.random.default_rng(2), 3, 50, 0.2)
    long = jakes_gains(np.random.default_rng(2), 3, 500, 0.2)
    assert np.allclose(short, long[:, :50], rtol=0, atol=1e-12)


def test_temporal_split():
    ds = generate_channel_set(ChannelConfig(n_antennas=4, n_ues=2, n_snapshots=100))
    train, test = ds.split(0.1)
    assert train.shape == (2, 90, 4) and test.shape == (2, 10, 4)
    assert np.array_equal(test, ds.h[:, 90:])
    with pytest.raises(ConfigError):
        ds.split(1.0)


def test_dataset_rejects_flat_array():
    with pytest.raises(DomainError):
        ChannelDataset(h=np.zeros((4, 4), dtype=complex))
