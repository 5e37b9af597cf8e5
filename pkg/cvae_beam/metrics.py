# cvae_beam/metrics.py
"""Principal angles, empirical CDFs and curve comparisons."""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from cvae_beam.errors import DomainError


@dataclass(frozen=True, eq=False)
class CdfCurve:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.grid.shape != self.values.shape:
            raise DomainError("CDF grid and values differ in length")
        if np.any(np.diff(self.grid) < 0):
            raise DomainError("CDF grid must be sorted")
        if np.any(np.diff(self.values) < 0) or (self.values.size and self.values[-1] > 1 + 1e-12):
            raise DomainError("CDF values must be nondecreasing and bounded by 1")

    def at(self, x: float) -> float:
        """Step-function value at x (0 left of the grid)."""
        k = np.searchsorted(self.grid, x, side="right") - 1
        return float(self.values[k]) if k >= 0 else 0.0


def _angle_rad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise DomainError("principal angle of a zero vector")
    ua, ub = a / na, b / nb
    inner = np.sum(np.conj(ub) * ua, axis=-1, keepdims=True)
    mag = np.abs(inner)
    phase = np.where(mag > 0, inner / np.where(mag > 0, mag, 1.0), 1.0)
    aligned = phase * ub
    cos = np.clip(mag[..., 0], 0.0, 1.0)
    # chord form stays accurate near 0 where arccos(cos) loses half the digits
    chord = np.linalg.norm(ua - aligned, axis=-1)
    sin_half = np.clip(chord / 2.0, 0.0, 1.0)
    return np.where(cos < 0.5, np.arccos(cos), 2.0 * np.arcsin(sin_half))


def principal_angles(H: np.ndarray, H_est: np.ndarray) -> np.ndarray:
    """Row-wise principal angles in degrees, symmetric in the two arguments."""
    H = np.asarray(H, dtype=np.complex128)
    H_est = np.asarray(H_est, dtype=np.complex128)
    return np.rad2deg(np.minimum(_angle_rad(H, H_est), _angle_rad(H_est, H)))


def principal_angle(h: np.ndarray, h_est: np.ndarray) -> float:
    return float(principal_angles(np.asarray(h)[None, :], np.asarray(h_est)[None, :])[0])


def empirical_cdf(samples: Sequence[float], grid: Optional[Sequence[float]] = None) -> CdfCurve:
    """values[k] = fraction of samples <= grid[k]; the grid defaults to the sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("empirical CDF of an empty sample")
    g = x if grid is None else np.sort(np.asarray(grid, dtype=float).ravel())
    values = np.searchsorted(x, g, side="right") / x.size
    return CdfCurve(grid=g, values=values)


def dominates(a: CdfCurve, b: CdfCurve, cutoff: float, tol: float = 0.0) -> bool:
    """True when curve a >= curve b at every grid point of either curve up to `cutoff`."""
    pts = np.union1d(a.grid, b.grid)
    pts = pts[pts <= cutoff]
    if pts.size == 0:
        pts = np.array([cutoff])
    return all(a.at(x) >= b.at(x) - tol for x in pts)


def median(samples: Sequence[float]) -> float:
    return float(np.median(np.asarray(samples, dtype=float)))


def crossing_index(a: Sequence[float], b: Sequence[float]) -> Optional[int]:
    """First index where a > b after some earlier index with a <= b, else None."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    seen_below = False
    for k in range(min(a.size, b.size)):
        if a[k] <= b[k]:
            seen_below = True
        elif seen_below:
            return k
    return None


def cdf_frame(curves: Dict[str, CdfCurve]) -> pd.DataFrame:
    frames = [pd.DataFrame({"grid_value": c.grid, "cdf_value": c.values, "series_label": label})
              for label, c in curves.items()]
    return pd.concat(frames, ignore_index=True)
