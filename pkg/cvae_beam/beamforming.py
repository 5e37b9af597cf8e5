# cvae_beam/beamforming.py
"""
beamforming.py
--------------
Single-stream multi-user downlink beamformers.

Channels are stored row-wise: H[i] is h_i (length N_A) and UE i receives
h_i^H sum_l v_l s_l + n_i. Rates are in nats.

Solvers
  - wmmse:            alternating MMSE detector / weight / beam updates.
  - stochastic_wmmse: stochastic successive upper-bound minimization, one
                      channel sample per iteration, with running averages of
                      the quadratic surrogate.
  - ezf:              zero forcing with equal per-UE power.
"""
import logging
from dataclasses import dataclass, replace
from itertools import chain
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigh, pinv

from cvae_beam.errors import ConfigError, DegenerateInputError, DimensionError, DomainError, SolverError

logger = logging.getLogger(__name__)

POWER_SLACK = 1e-6
ZF_RTOL = 1e-10


@dataclass(frozen=True)
class SolverOptions:
    rho: float = 0.01
    max_iters: int = 200
    power_tol: float = 1e-8
    rate_tol: float = 1e-6
    sigma: Union[float, Tuple[float, ...]] = 1.0  # noise std per UE, scalar broadcasts
    max_halvings: int = 200

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError(f"solver.rho must be > 0, got {self.rho}")
        if not (self.power_tol > 0 and self.rate_tol > 0):
            raise ConfigError("solver tolerances must be > 0")
        if self.max_iters < 1 or self.max_halvings < 1:
            raise ConfigError("solver.max_iters and solver.max_halvings must be >= 1")
        if np.any(np.asarray(self.sigma, dtype=float) <= 0):
            raise ConfigError("solver.sigma must be > 0")

    def sigmas(self, n_ues: int) -> np.ndarray:
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim == 0:
            return np.full(n_ues, float(s))
        if s.shape != (n_ues,):
            raise DimensionError(f"solver.sigma has {s.size} entries for {n_ues} UEs")
        return s


@dataclass(eq=False)
class BeamformerSet:
    v: np.ndarray  # (L, N_A), one beam per row
    power_budget: float
    multiplier: float = 0.0
    converged: bool = True

    def __post_init__(self):
        self.v = np.atleast_2d(np.asarray(self.v, dtype=np.complex128))
        if not self.power_budget > 0:
            raise DomainError(f"power budget must be > 0, got {self.power_budget}")
        if self.power > self.power_budget * (1.0 + POWER_SLACK):
            raise DomainError(f"beam power {self.power:.6g} exceeds budget {self.power_budget:.6g}")

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.v) ** 2))

    @property
    def n_ues(self) -> int:
        return self.v.shape[0]


@dataclass(eq=False)
class AuxVars:
    w: np.ndarray  # (L,) MSE weights
    z: np.ndarray  # (L, N_A) proximal centres
    u: np.ndarray  # (L,) detectors the weights were computed with

    def __post_init__(self):
        if np.any(self.w <= 0):
            raise DegenerateInputError("MSE weights must be positive")


class TracePoint(NamedTuple):
    iteration: int
    sum_rate: float
    power: float
    mu: float


# ---- Rate / MSE machinery ------------------------------------------------------
def _as_channels(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim == 1:
        H = H[None, :]
    if H.ndim != 2:
        raise DimensionError(f"expected (L, N_A) channels, got shape {H.shape}")
    return H


def _check_pair(H: np.ndarray, V: BeamformerSet):
    if H.shape[-1] != V.v.shape[1] or H.shape[-2] != V.n_ues:
        raise DimensionError(f"channels {H.shape} do not match beams {V.v.shape}")


def cross_gains(H: np.ndarray, V: BeamformerSet) -> np.ndarray:
    """G[..., i, l] = h_i^H v_l."""
    return H.conj() @ V.v.T


def mmse_detectors(H, V: BeamformerSet, sigmas) -> np.ndarray:
    H = _as_channels(H)
    _check_pair(H, V)
    G = cross_gains(H, V)
    J = np.sum(np.abs(G) ** 2, axis=1) + np.asarray(sigmas, dtype=float) ** 2
    if np.any(J == 0):
        raise DegenerateInputError("zero received power and zero noise")
    return np.diagonal(G) / J


def mmse_detector(h_i, V: BeamformerSet, sigma_i: float, index: int = 0) -> complex:
    """MMSE receive scalar of UE `index`: u = h^H v_i / (sum_l |h^H v_l|^2 + sigma^2)."""
    h_i = np.asarray(h_i, dtype=np.complex128)
    if h_i.shape != (V.v.shape[1],):
        raise DimensionError(f"channel length {h_i.shape} != N_A = {V.v.shape[1]}")
    g = V.v.conj() @ h_i
    g = np.conj(g)  # h^H v_l
    J = float(np.sum(np.abs(g) ** 2) + sigma_i ** 2)
    if J == 0:
        raise DegenerateInputError("zero received power and zero noise")
    return complex(g[index] / J)


def mse_values(H, V: BeamformerSet, sigmas, u: Optional[np.ndarray] = None) -> np.ndarray:
    """E_i = |1 - conj(u_i) h_i^H v_i|^2 + |u_i|^2 (sum_{l!=i} |h_i^H v_l|^2 + sigma_i^2)."""
    H = _as_channels(H)
    _check_pair(H, V)
    s2 = np.asarray(sigmas, dtype=float) ** 2
    if u is None:
        u = mmse_detectors(H, V, sigmas)
    G = cross_gains(H, V)
    direct = np.diagonal(G)
    leak = np.sum(np.abs(G) ** 2, axis=1) - np.abs(direct) ** 2
    return np.abs(1.0 - np.conj(u) * direct) ** 2 + np.abs(u) ** 2 * (leak + s2)


def user_rates(H, V: BeamformerSet, sigmas) -> np.ndarray:
    """ln(1 + SINR_i) for every UE; H may carry leading batch axes."""
    H = np.asarray(H, dtype=np.complex128)
    _check_pair(H, V)
    s2 = np.asarray(sigmas, dtype=float) ** 2
    if np.any(s2 <= 0):
        raise DomainError("noise levels must be > 0")
    P = np.abs(cross_gains(H, V)) ** 2
    signal = np.diagonal(P, axis1=-2, axis2=-1)
    interference = np.sum(P, axis=-1) - signal
    return np.log1p(signal / (interference + s2))


def user_rate(h_i, V: BeamformerSet, sigma_i: float, index: int = 0) -> float:
    h_i = np.asarray(h_i, dtype=np.complex128)
    if h_i.shape != (V.v.shape[1],):
        raise DimensionError(f"channel length {h_i.shape} != N_A = {V.v.shape[1]}")
    if not 0 <= index < V.n_ues:
        raise DimensionError(f"UE index {index} outside [0, {V.n_ues})")
    if sigma_i <= 0:
        raise DomainError("sigma_i must be > 0")
    g = np.abs(V.v.conj() @ h_i) ** 2
    interference = float(np.sum(g) - g[index])
    return float(np.log1p(g[index] / (interference + sigma_i ** 2)))


def sum_rate(H, V: BeamformerSet, sigmas) -> float:
    return float(np.sum(user_rates(_as_channels(H), V, sigmas)))


def expected_sum_rate(H_batch, V: BeamformerSet, sigmas) -> float:
    """Sample-average sum rate over channel realizations of shape (B, L, N_A) or (L, N_A)."""
    rates = user_rates(np.asarray(H_batch, dtype=np.complex128), V, sigmas)
    return float(np.mean(np.sum(rates, axis=-1)))


def negative_sum_rate(H, V: BeamformerSet, sigmas) -> float:
    return -sum_rate(H, V, sigmas)


def to_bits(x):
    """nats -> bits."""
    return x / np.log(2.0)


# ---- SSUM building blocks ------------------------------------------------------
def mrt(H, P: float) -> BeamformerSet:
    """Maximum-ratio beams with the budget split equally across UEs."""
    H = _as_channels(H)
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    scale = np.sqrt(P / H.shape[0]) / np.where(norms > 0, norms, 1.0)
    return BeamformerSet(v=np.where(norms > 0, H * scale, 0.0), power_budget=P)


def ssum_update_p(v_prev: BeamformerSet, h_r, opts: SolverOptions) -> AuxVars:
    """Weights w_i = 1/E_i at the MMSE detector, proximal centres z_i = v_prev_i."""
    H = _as_channels(h_r)
    sig = opts.sigmas(H.shape[0])
    u = mmse_detectors(H, v_prev, sig)
    E = mse_values(H, v_prev, sig, u)
    if np.any(E <= 0):
        raise DegenerateInputError("zero MSE; noise level must be > 0")
    return AuxVars(w=1.0 / E, z=v_prev.v.copy(), u=u)


def surrogate_value(V: BeamformerSet, aux: AuxVars, H, sigmas, rho: float, d: float = 1.0) -> float:
    """sum_i -ln w_i + w_i E_i(u_i, v, h) + rho ||v_i - z_i||^2 - d, detectors held at aux.u."""
    E = mse_values(H, V, sigmas, u=aux.u)
    prox = np.sum(np.abs(V.v - aux.z) ** 2, axis=1)
    return float(np.sum(-np.log(aux.w) + aux.w * E + rho * prox - d))


@dataclass(eq=False)
class SsumState:
    """Running averages over r samples of the quadratic and linear surrogate terms."""

    v: BeamformerSet
    quad: np.ndarray
    lin: np.ndarray
    iteration: int = 0

    @classmethod
    def start(cls, v0: BeamformerSet) -> "SsumState":
        L, n = v0.v.shape
        return cls(v=v0, quad=np.zeros((n, n), dtype=np.complex128),
                   lin=np.zeros((L, n), dtype=np.complex128))

    def absorb(self, aux: AuxVars, h_r, rho: float) -> None:
        H = _as_channels(h_r)
        c = aux.w * np.abs(aux.u) ** 2
        A = H.T @ (c[:, None] * H.conj())  # sum_i c_i h_i h_i^H
        B = (aux.w * aux.u)[:, None] * H + rho * aux.z
        self.iteration += 1
        self.quad += (A - self.quad) / self.iteration
        self.quad = 0.5 * (self.quad + self.quad.conj().T)
        self.lin += (B - self.lin) / self.iteration


def solve_beams(
    quad: np.ndarray,
    lin: np.ndarray,
    shift: float,
    power: float,
    power_tol: float = 1e-8,
    max_halvings: int = 200,
) -> Tuple[np.ndarray, float]:
    """
    v_l = (quad + (shift + mu) I)^{-1} lin_l with the smallest mu >= 0 meeting
    sum_l ||v_l||^2 <= power. One eigendecomposition serves every mu; at
    mu = 0 directions with vanishing eigenvalue are dropped (pseudo-inverse).
    Bisection stops within power_tol below the budget, never above it.
    """
    lam, U = eigh(quad)
    lam = np.clip(lam, 0.0, None)
    coeff = U.conj().T @ lin.T  # (N_A, L)
    weight = np.sum(np.abs(coeff) ** 2, axis=1)
    total = float(np.sum(weight))
    if total == 0.0:
        return np.zeros_like(lin), 0.0
    floor = 1e-12 * max(1.0, float(lam[-1]))

    def power_at(mu: float) -> float:
        denom = lam + shift + mu
        keep = denom > floor
        return float(np.sum(weight[keep] / denom[keep] ** 2))

    def beams_at(mu: float) -> np.ndarray:
        denom = lam + shift + mu
        inv = np.where(denom > floor, 1.0 / np.where(denom > floor, denom, 1.0), 0.0)
        return (U @ (inv[:, None] * coeff)).T

    if power_at(0.0) <= power:
        return beams_at(0.0), 0.0

    # power_at(hi) <= total / hi^2 = power; hi stays on the feasible side
    hi = float(np.sqrt(total / power))
    if power_at(hi) > power * (1.0 + POWER_SLACK):
        raise SolverError(f"power bisection bracket [0, {hi:.3g}] does not contain the multiplier")
    lo = 0.0
    for _ in range(max_halvings):
        mid = 0.5 * (lo + hi)
        p = power_at(mid)
        if p > power:
            lo = mid
            continue
        hi = mid
        if power - p <= power_tol * power:
            break
    return beams_at(hi), hi


def ssum_update_v(state: SsumState, opts: SolverOptions) -> BeamformerSet:
    P = state.v.power_budget
    v, mu = solve_beams(state.quad, state.lin, opts.rho, P, opts.power_tol, opts.max_halvings)
    state.v = BeamformerSet(v=v, power_budget=P, multiplier=mu)
    return state.v


# ---- Solvers -------------------------------------------------------------------
def wmmse(
    H_est,
    P: float,
    opts: SolverOptions,
    init: Optional[BeamformerSet] = None,
    trace: Optional[List[TracePoint]] = None,
) -> BeamformerSet:
    """
    Deterministic WMMSE on the given channels, started from the MRT split.

    Returns the best iterate; `converged` is False when max_iters ran out.
    Pass a list as `trace` to collect (iteration, sum_rate, power, mu) rows.
    """
    H = _as_channels(H_est)
    sig = opts.sigmas(H.shape[0])
    V = init if init is not None else mrt(H, P)
    rate = sum_rate(H, V, sig)
    best, best_rate = V, rate
    if trace is not None:
        trace.append(TracePoint(0, rate, V.power, V.multiplier))

    converged = False
    for it in range(1, opts.max_iters + 1):
        aux = ssum_update_p(V, H, opts)
        state = SsumState.start(V)
        state.absorb(aux, H, rho=0.0)
        v, mu = solve_beams(state.quad, state.lin, 0.0, P, opts.power_tol, opts.max_halvings)
        V = BeamformerSet(v=v, power_budget=P, multiplier=mu)
        new_rate = sum_rate(H, V, sig)
        if trace is not None:
            trace.append(TracePoint(it, new_rate, V.power, mu))
        if new_rate > best_rate:
            best, best_rate = V, new_rate
        if new_rate - rate < opts.rate_tol:
            converged = True
            break
        rate = new_rate

    if not converged:
        logger.warning("WMMSE stopped after %d iterations without meeting rate_tol=%g",
                       opts.max_iters, opts.rate_tol)
    return replace(best, converged=converged)


def stochastic_wmmse(
    sample_stream: Iterable,
    P: float,
    opts: SolverOptions,
    init: Optional[BeamformerSet] = None,
    eval_channels=None,
    on_iterate: Optional[Callable[[int, BeamformerSet], None]] = None,
) -> Tuple[BeamformerSet, List[TracePoint]]:
    """
    One SSUM iteration per drawn sample (an (L, N_A) channel set), started
    from `init` or from WMMSE on the first sample.

    The trace records the sum rate after each iteration, on `eval_channels`
    when given ((L, N_A) or a batch (B, L, N_A) that is averaged) and on the
    drawn sample otherwise. `on_iterate(r, V)` sees every iterate.
    """
    samples = iter(sample_stream)
    try:
        first = _as_channels(next(samples))
    except StopIteration:
        raise SolverError("stochastic WMMSE needs at least one channel sample") from None

    sig = opts.sigmas(first.shape[0])
    state = SsumState.start(init if init is not None else wmmse(first, P, opts))
    trace: List[TracePoint] = []
    for r, sample in enumerate(chain([first], samples), start=1):
        H = _as_channels(sample)
        aux = ssum_update_p(state.v, H, opts)
        state.absorb(aux, H, opts.rho)
        V = ssum_update_v(state, opts)
        target = H if eval_channels is None else eval_channels
        trace.append(TracePoint(r, expected_sum_rate(target, V, sig), V.power, V.multiplier))
        if on_iterate is not None:
            on_iterate(r, V)
    return state.v, trace


def ezf(H_est, P: float, sigmas: Optional[Sequence[float]] = None) -> BeamformerSet:
    """Pseudo-inverse zero forcing, each beam scaled to power P / L. Noise levels do not enter."""
    H = _as_channels(H_est)
    W = pinv(H.conj(), rtol=ZF_RTOL)  # H^H-rows times W = I
    V = W.T
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    scale = np.sqrt(P / H.shape[0]) / np.where(norms > 0, norms, 1.0)
    return BeamformerSet(v=np.where(norms > 0, V * scale, 0.0), power_budget=P)
