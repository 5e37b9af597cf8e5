# cvae_beam/feedback.py
"""
feedback.py
-----------
Limited-feedback loop between UE and BS.

The BS beams its pilots through a virtual antenna matrix Q (N_A x N_P). The
UE scores every codebook beam against the effective port-domain channel,
reports the best index (PMI) and its score (CQI), and the BS rebuilds a
coarse estimate Q a_pmi. A Type II style report (several beams with
quantized amplitude and phase) gives a finer estimate.

Scalar helpers wrap the batched forms, so both go through the same code.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import dft

from cvae_beam.errors import ConfigError, DegenerateInputError, DimensionError

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-12


class CodebookKind(str, Enum):
    TYPE_I = "TypeI"
    TYPE_II_BASIS = "TypeIIBasis"


@dataclass(frozen=True)
class FeedbackConfig:
    n_ports: int = 8
    oversampling: int = 4
    type2_beams: int = 4
    amp_bits: Optional[int] = 3
    phase_bits: Optional[int] = 4
    sample_sigma: float = 0.1
    covariance_window: int = 1

    def __post_init__(self):
        if self.n_ports < 1 or self.oversampling < 1:
            raise ConfigError("feedback.n_ports and feedback.oversampling must be >= 1")
        if not 1 <= self.type2_beams <= self.n_ports:
            raise ConfigError(f"feedback.type2_beams must lie in [1, {self.n_ports}], got {self.type2_beams}")
        for name in ("amp_bits", "phase_bits"):
            bits = getattr(self, name)
            if bits is not None and bits < 1:
                raise ConfigError(f"feedback.{name} must be >= 1 or null (unquantized)")
        if self.sample_sigma < 0:
            raise ConfigError("feedback.sample_sigma must be >= 0")
        if self.covariance_window < 1:
            raise ConfigError("feedback.covariance_window must be >= 1")


@dataclass(frozen=True, eq=False)
class VirtualAntennaMatrix:
    Q: np.ndarray

    def __post_init__(self):
        gram = self.Q.conj().T @ self.Q
        err = np.max(np.abs(gram - np.eye(self.Q.shape[1])))
        if err > ORTHONORMAL_TOL:
            raise DimensionError(f"virtual antenna matrix columns are not orthonormal (err={err:.2e})")

    @property
    def n_antennas(self) -> int:
        return self.Q.shape[0]

    @property
    def n_ports(self) -> int:
        return self.Q.shape[1]

    def to_ports(self, H: np.ndarray) -> np.ndarray:
        """Row-wise Q^H h."""
        H = np.asarray(H)
        if H.shape[-1] != self.n_antennas:
            raise DimensionError(f"channel length {H.shape[-1]} != N_A = {self.n_antennas}")
        return H @ self.Q.conj()

    def to_antennas(self, X: np.ndarray) -> np.ndarray:
        """Row-wise Q x."""
        return np.asarray(X) @ self.Q.T


@dataclass(frozen=True, eq=False)
class Codebook:
    vectors: np.ndarray  # (M, N_P), one beam per row
    kind: CodebookKind = CodebookKind.TYPE_I

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ConfigError("codebook needs at least one beam")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.max(np.abs(norms - 1.0)) > ORTHONORMAL_TOL:
            raise ConfigError("codebook beams must have unit norm")
        diff = self.vectors[:, None, :] - self.vectors[None, :, :]
        dist = np.linalg.norm(diff, axis=-1) + np.eye(len(self.vectors))
        if np.min(dist) < 1e-9:
            raise ConfigError("codebook beams must be pairwise distinct")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_ports(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class FeedbackRecord:
    ue_index: int
    time_index: int
    pmi: int
    cqi: float

    def __post_init__(self):
        if self.pmi < 0:
            raise IndexError(f"pmi must be >= 0, got {self.pmi}")
        if not self.cqi >= 0:
            raise ConfigError(f"cqi must be >= 0, got {self.cqi}")


# ---- Construction -------------------------------------------------------------
def build_virtual_antenna_matrix(n_antennas: int, n_ports: int) -> VirtualAntennaMatrix:
    """Columns of the unitary N_A-point DFT at indices floor(k * N_A / N_P)."""
    if n_ports < 1 or n_ports > n_antennas:
        raise ConfigError(f"n_ports must lie in [1, n_antennas={n_antennas}], got {n_ports}")
    columns = (np.arange(n_ports) * n_antennas) // n_ports
    return VirtualAntennaMatrix(Q=dft(n_antennas, scale="sqrtn")[:, columns])


def build_type1_codebook(n_ports: int, oversampling: int) -> Codebook:
    """M = N_P * oversampling oversampled DFT beams, entry k = exp(j 2 pi k m / M) / sqrt(N_P)."""
    if n_ports < 1 or oversampling < 1:
        raise ConfigError("n_ports and oversampling must be >= 1")
    m_total = n_ports * oversampling
    k = np.arange(n_ports)
    m = np.arange(m_total)
    vectors = np.exp(2j * np.pi * np.outer(m, k) / m_total) / np.sqrt(n_ports)
    return Codebook(vectors=vectors, kind=CodebookKind.TYPE_I)


def build_type2_basis(n_ports: int) -> Codebook:
    """Orthonormal port-domain beams (the N_P-point unitary DFT)."""
    return Codebook(vectors=dft(n_ports, scale="sqrtn").T.copy(), kind=CodebookKind.TYPE_II_BASIS)


# ---- Type I -------------------------------------------------------------------
def beam_scores(H: np.ndarray, Q: VirtualAntennaMatrix, cb: Codebook) -> np.ndarray:
    """|a_m^H Q^H h|^2 for every row h of H and every beam m."""
    ports = Q.to_ports(H)
    return np.abs(ports @ cb.vectors.conj().T) ** 2


def _pick(scores: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # argmax returns the first maximum, i.e. the smallest index on ties
    pmi = np.argmax(scores, axis=-1)
    cqi = np.take_along_axis(scores, pmi[..., None], axis=-1)[..., 0]
    return pmi, cqi


def feedback_batch(H: np.ndarray, Q: VirtualAntennaMatrix, cb: Codebook) -> Tuple[np.ndarray, np.ndarray]:
    return _pick(beam_scores(H, Q, cb))


def compute_feedback(
    h: np.ndarray, Q: VirtualAntennaMatrix, cb: Codebook, ue_index: int = 0, time_index: int = 0
) -> FeedbackRecord:
    h = np.asarray(h)
    if h.ndim != 1:
        raise DimensionError(f"expected one channel vector, got shape {h.shape}")
    pmi, cqi = feedback_batch(h[None, :], Q, cb)
    return FeedbackRecord(ue_index=ue_index, time_index=time_index, pmi=int(pmi[0]), cqi=float(cqi[0]))


def effective_covariance(snapshots: np.ndarray, Q: VirtualAntennaMatrix) -> np.ndarray:
    """R = Q^H C Q with C the sample covariance of the given snapshots (rows)."""
    S = np.atleast_2d(np.asarray(snapshots))
    C = S.T @ S.conj() / S.shape[0]
    return Q.Q.conj().T @ C @ Q.Q


def feedback_from_covariance(R: np.ndarray, cb: Codebook) -> Tuple[int, float]:
    A = cb.vectors
    scores = np.real(np.einsum("mk,kl,ml->m", A.conj(), R, A))
    pmi, cqi = _pick(scores)
    return int(pmi), float(cqi)


def feedback_arrays(
    H: np.ndarray, Q: VirtualAntennaMatrix, cb: Codebook, window: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """
    PMI/CQI for channels of shape (ues, T, N_A).

    With window > 1 the score of slot t is a_m^H R a_m for the covariance of
    the last `window` snapshots (fewer at the start), which equals the
    moving average of the single-snapshot scores.
    """
    scores = beam_scores(H, Q, cb)  # (ues, T, M)
    if window > 1:
        csum = np.cumsum(scores, axis=1)
        lagged = np.zeros_like(csum)
        lagged[:, window:] = csum[:, :-window]
        counts = np.minimum(np.arange(1, scores.shape[1] + 1), window)
        scores = (csum - lagged) / counts[None, :, None]
    return _pick(scores)


def feedback_table(H: np.ndarray, Q: VirtualAntennaMatrix, cb: Codebook, window: int = 1) -> pd.DataFrame:
    pmi, cqi = feedback_arrays(H, Q, cb, window)
    ues, T = pmi.shape
    return pd.DataFrame({
        "ue": np.repeat(np.arange(ues), T),
        "t": np.tile(np.arange(T), ues),
        "pmi": pmi.ravel(),
        "cqi": cqi.ravel(),
    })


def coarse_estimates(pmi: np.ndarray, Q: VirtualAntennaMatrix, cb: Codebook) -> np.ndarray:
    pmi = np.asarray(pmi)
    if np.any(pmi < 0) or np.any(pmi >= cb.size):
        raise IndexError(f"pmi out of range [0, {cb.size})")
    return Q.to_antennas(cb.vectors[pmi])


def coarse_estimate(rec: FeedbackRecord, Q: VirtualAntennaMatrix, cb: Codebook) -> np.ndarray:
    return coarse_estimates(np.array([rec.pmi]), Q, cb)[0]


# ---- Type II ------------------------------------------------------------------
def _quantize_uniform(x: np.ndarray, levels: int) -> np.ndarray:
    return np.round(x * levels) / levels


def type2_estimates(
    H: np.ndarray,
    Q: VirtualAntennaMatrix,
    basis: Codebook,
    k_beams: int,
    amp_bits: Optional[int],
    phase_bits: Optional[int],
) -> np.ndarray:
    """
    Multi-beam estimates for the rows of H.

    Keeps the k strongest basis coefficients, quantizes amplitudes (relative to
    the strongest) on a uniform grid in [0, 1] and phases (relative to the
    strongest) on a uniform grid in [0, 2 pi). `None` bits means unquantized.
    The strongest coefficient's phase is kept as the common phase.
    """
    H = np.atleast_2d(np.asarray(H))
    if not 1 <= k_beams <= Q.n_ports:
        raise ConfigError(f"k_beams must lie in [1, {Q.n_ports}], got {k_beams}")
    for bits in (amp_bits, phase_bits):
        if bits is not None and bits < 1:
            raise ConfigError("quantization bits must be >= 1")
    if np.any(np.linalg.norm(H, axis=1) == 0):
        raise DegenerateInputError("zero channel vector")

    coeffs = Q.to_ports(H) @ basis.vectors.conj().T
    mags = np.abs(coeffs)
    strongest = np.max(mags, axis=1)
    if np.any(strongest == 0):
        raise DegenerateInputError("channel has no component in the port domain")

    order = np.argsort(-mags, axis=1, kind="stable")
    keep = np.zeros(mags.shape, dtype=bool)
    np.put_along_axis(keep, order[:, :k_beams], True, axis=1)

    ref = np.take_along_axis(coeffs, order[:, :1], axis=1)
    amp = mags / strongest[:, None]
    phase = np.angle(coeffs * np.conj(ref))
    if amp_bits is not None:
        amp = _quantize_uniform(amp, 2 ** amp_bits - 1)
    if phase_bits is not None:
        step = 2.0 * np.pi / 2 ** phase_bits
        phase = np.round(phase / step) * step
    common = ref / np.abs(ref)
    rebuilt = np.where(keep, amp * np.exp(1j * phase), 0.0) * common

    est = Q.to_antennas(rebuilt @ basis.vectors)
    return est / np.linalg.norm(est, axis=1, keepdims=True)


def type2_estimate(
    h: np.ndarray,
    Q: VirtualAntennaMatrix,
    basis: Codebook,
    k_beams: int,
    amp_bits: Optional[int],
    phase_bits: Optional[int],
) -> np.ndarray:
    return type2_estimates(np.asarray(h)[None, :], Q, basis, k_beams, amp_bits, phase_bits)[0]


# ---- Empirical distribution ---------------------------------------------------
def complex_normal(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """CN(0, sigma^2) entries."""
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_codebook_channel(
    rec: FeedbackRecord,
    Q: VirtualAntennaMatrix,
    cb: Codebook,
    sigma: float,
    count: int,
    seed: int,
) -> np.ndarray:
    """`count` draws of h_hat + n with n ~ CN(0, sigma^2 I); shape (count, N_A)."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    centre = coarse_estimate(rec, Q, cb)
    rng = np.random.default_rng(seed)
    return centre[None, :] + complex_normal(rng, (count, centre.size), sigma)
