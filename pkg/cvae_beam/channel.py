# cvae_beam/channel.py
"""
channel.py
----------
Clustered geometric downlink channel for a uniform linear array.

Each UE sees `n_paths` plane waves whose angles are drawn once around a
per-UE mean angle. Path gains follow Jakes' model, realized as a sum of
sinusoids so that E[g(t) g*(t+tau)] = J0(2*pi*f_d*tau).
"""
import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from cvae_beam.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

# ---- Defaults ----------------------------------------------------------------
# 30 km/h at a 2 GHz carrier sampled every 5 ms.
DEFAULT_DOPPLER = 0.278
MEAN_ANGLE_SPAN_DEG = 60.0


@dataclass(frozen=True)
class ChannelConfig:
    n_antennas: int = 16
    n_ues: int = 4
    n_snapshots: int = 5556
    n_paths: int = 6
    angle_spread_deg: float = 10.0
    normalized_doppler: float = DEFAULT_DOPPLER
    rng_seed: int = 0
    jitter_deg: float = 2.0
    n_sinusoids: int = 32

    def __post_init__(self):
        for name in ("n_antennas", "n_ues", "n_snapshots", "n_paths", "n_sinusoids"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"channel.{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.normalized_doppler <= 0.5:
            raise ConfigError(f"channel.normalized_doppler must lie in [0, 0.5], got {self.normalized_doppler}")
        if self.angle_spread_deg < 0 or self.jitter_deg < 0:
            raise ConfigError("channel angle spread and jitter must be nonnegative")
        if self.rng_seed < 0:
            raise ConfigError("channel.rng_seed must be unsigned")


@dataclass(frozen=True, eq=False)
class ChannelSnapshot:
    ue_index: int
    time_index: int
    h: np.ndarray


@dataclass(frozen=True, eq=False)
class ChannelDataset:
    """Channels stored as one array `h` of shape (n_ues, n_snapshots, n_antennas)."""

    h: np.ndarray
    config: Optional[ChannelConfig] = field(default=None, compare=False)

    def __post_init__(self):
        if self.h.ndim != 3:
            raise DomainError(f"channel array must be (ues, snapshots, antennas), got shape {self.h.shape}")

    @property
    def n_ues(self) -> int:
        return self.h.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.h.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.h.shape[2]

    def __len__(self) -> int:
        return self.n_ues * self.n_snapshots

    def snapshot(self, ue: int, t: int) -> ChannelSnapshot:
        return ChannelSnapshot(ue_index=ue, time_index=t, h=self.h[ue, t])

    def snapshots(self) -> Iterator[ChannelSnapshot]:
        for ue in range(self.n_ues):
            for t in range(self.n_snapshots):
                yield self.snapshot(ue, t)

    def n_test(self, test_fraction: float) -> int:
        return int(round(self.n_snapshots * test_fraction))

    def split(self, test_fraction: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
        """Temporal holdout: the last slots of every UE form the test set."""
        if not 0.0 < test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
        cut = self.n_snapshots - self.n_test(test_fraction)
        if cut < 1 or cut >= self.n_snapshots:
            raise ConfigError(f"cannot split {self.n_snapshots} snapshots with fraction {test_fraction}")
        return self.h[:, :cut], self.h[:, cut:]


# ---- Array response -----------------------------------------------------------
def steering_matrix(angles_deg, n_antennas: int) -> np.ndarray:
    """Rows are ULA responses a(theta) for each angle (half-wavelength spacing)."""
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    if n_antennas < 1:
        raise DomainError(f"n_antennas must be >= 1, got {n_antennas}")
    if np.any(np.abs(angles) > 90.0) or not np.all(np.isfinite(angles)):
        raise DomainError(f"angles must lie in [-90, 90] degrees, got {angles}")
    k = np.arange(n_antennas)
    phase = np.pi * np.outer(np.sin(np.deg2rad(angles)), k)
    return np.exp(1j * phase) / np.sqrt(n_antennas)


def steering_vector(angle_deg: float, n_antennas: int) -> np.ndarray:
    return steering_matrix([angle_deg], n_antennas)[0]


# ---- Fading -------------------------------------------------------------------
def jakes_gains(
    rng: np.random.Generator,
    n_paths: int,
    n_snapshots: int,
    normalized_doppler: float,
    n_sinusoids: int = 32,
) -> np.ndarray:
    """
    Unit-power Rayleigh gains, shape (n_paths, n_snapshots).

    Arrival angles are equally spaced over a half circle with a random offset
    per path; every random draw happens before the time axis is built, so the
    first T samples do not depend on the requested length.
    """
    # offsets away from 0.5 keep sinusoid pairs from sharing opposite frequencies
    offsets = rng.uniform(0.05, 0.45, size=(n_paths, 1))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_paths, n_sinusoids))
    alpha = np.pi * (np.arange(n_sinusoids)[None, :] + offsets) / n_sinusoids
    omega = 2.0 * np.pi * normalized_doppler * np.cos(alpha)

    t = np.arange(n_snapshots, dtype=float)
    arg = omega[:, :, None] * t[None, None, :] + phases[:, :, None]
    return np.exp(1j * arg).sum(axis=1) / np.sqrt(n_sinusoids)


def ue_mean_angles(n_ues: int) -> np.ndarray:
    if n_ues == 1:
        return np.zeros(1)
    return np.linspace(-MEAN_ANGLE_SPAN_DEG, MEAN_ANGLE_SPAN_DEG, n_ues)


def _ue_channels(config: ChannelConfig, ue: int, mean_angle: float) -> np.ndarray:
    rng = np.random.default_rng([config.rng_seed, ue])
    centre = mean_angle + rng.uniform(-config.jitter_deg, config.jitter_deg)
    half = config.angle_spread_deg / 2.0
    angles = np.clip(centre + rng.uniform(-half, half, size=config.n_paths), -90.0, 90.0)

    responses = steering_matrix(angles, config.n_antennas)  # (paths, antennas)
    gains = jakes_gains(rng, config.n_paths, config.n_snapshots,
                        config.normalized_doppler, config.n_sinusoids)
    scale = np.sqrt(config.n_antennas / config.n_paths)
    return scale * (gains.T @ responses)


def generate_channel_set(config: ChannelConfig) -> ChannelDataset:
    means = ue_mean_angles(config.n_ues)
    h = np.empty((config.n_ues, config.n_snapshots, config.n_antennas), dtype=np.complex128)
    for ue in range(config.n_ues):
        h[ue] = _ue_channels(config, ue, means[ue])

    norms = np.linalg.norm(h, axis=-1)
    if np.any(norms == 0):
        raise DomainError("generated a zero channel snapshot")
    logger.debug("generated %d snapshots, mean |h|^2/N_A = %.4f",
                 h.shape[0] * h.shape[1], float(np.mean(norms ** 2)) / config.n_antennas)
    h.setflags(write=False)
    return ChannelDataset(h=h, config=config)
