"""Two-level population dynamics under comb drive.

Traces report the transferred population, so ``P(0) = 0``.  All angular
quantities (Rabi frequency, detuning) are rad/s; distribution widths are Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite

TWO_PI = 2 * math.pi
FWHM_TO_SIGMA = 1 / (2 * math.sqrt(2 * math.log(2)))


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetuningDistribution:
    """Distribution g(delta) of the two-photon detuning.

    ``kind`` is ``"delta"`` (sharp detuning at ``center_hz``) or ``"gaussian"``
    with full width ``fwhm_hz``.
    """

    kind: str = "delta"
    fwhm_hz: float = 0.0
    center_hz: float = 0.0

    def __post_init__(self):
        if self.kind not in ("delta", "gaussian"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "gaussian" and not self.fwhm_hz > 0:
            raise ValueError("gaussian detuning distribution needs FWHM > 0")

    @classmethod
    def gaussian(cls, fwhm_hz: float, center_hz: float = 0.0) -> "DetuningDistribution":
        return cls("gaussian", fwhm_hz, center_hz)

    @classmethod
    def sharp(cls, center_hz: float = 0.0) -> "DetuningDistribution":
        return cls("delta", 0.0, center_hz)

    @property
    def sigma(self) -> float:
        """Standard deviation in rad/s."""
        return TWO_PI * self.fwhm_hz * FWHM_TO_SIGMA

    @property
    def center(self) -> float:
        return TWO_PI * self.center_hz

    def pdf(self, delta) -> np.ndarray:
        """Density in delta (rad/s)^-1 for the gaussian kind."""
        if self.kind != "gaussian":
            raise ValueError("a delta distribution has no density")
        s = self.sigma
        return np.exp(-0.5 * ((np.asarray(delta) - self.center) / s) ** 2) / (s * math.sqrt(TWO_PI))


@dataclass(frozen=True)
class RabiTrace:
    times: np.ndarray
    populations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        p = np.asarray(self.populations, float)
        if t.shape != p.shape:
            raise ValueError("times and populations differ in shape")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("populations outside [0, 1]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "populations", p)

    def inverted(self) -> "RabiTrace":
        """Population remaining in the initial state."""
        return RabiTrace(self.times, 1.0 - self.populations)


@dataclass(frozen=True)
class Spectrum:
    detunings: np.ndarray  # rad/s
    populations: np.ndarray

    @property
    def detunings_hz(self) -> np.ndarray:
        return self.detunings / TWO_PI


def _clip(p):
    return np.clip(p, 0.0, 1.0)


def rabi_probability(omega, delta, t) -> np.ndarray:
    """Closed-form transfer probability, broadcasting over all arguments."""
    omega = np.asarray(omega, float)
    delta = np.asarray(delta, float)
    t = np.asarray(t, float)
    w2 = omega**2 + delta**2
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(w2 > 0, omega**2 / np.where(w2 > 0, w2, 1.0), 0.0)
    # 1 - cos(x) written as 2 sin^2(x/2) to keep precision near t = 0
    return _clip(frac * np.sin(0.5 * np.sqrt(w2) * t) ** 2)


def rabi_trace(omega: float, delta: float, times) -> RabiTrace:
    if omega < 0:
        raise ValueError("Rabi frequency must be non-negative")
    times = np.asarray(times, float)
    return RabiTrace(times, rabi_probability(omega, delta, times))


@lru_cache(maxsize=32)
def _nodes(n: int):
    x, w = roots_hermite(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _gh_average(omega, dist: DetuningDistribution, times, n: int) -> np.ndarray:
    x, w = _nodes(n)
    delta = dist.center + math.sqrt(2) * dist.sigma * x
    p = rabi_probability(omega, delta[None, :], np.asarray(times, float)[:, None])
    return p @ w / math.sqrt(math.pi)


def averaged_trace(
    omega: float,
    dist: DetuningDistribution,
    times,
    nodes: int = 64,
    tol: float = 1e-6,
    max_nodes: int = 1024,
    adaptive: bool = True,
) -> RabiTrace:
    """Rabi trace averaged over g(delta) with Gauss-Hermite quadrature.

    Each result is checked against twice the node count; with ``adaptive`` the
    node count doubles until the check passes or ``max_nodes`` is exceeded.
    """
    if omega < 0:
        raise ValueError("Rabi frequency must be non-negative")
    times = np.asarray(times, float)
    if dist.kind == "delta":
        return rabi_trace(omega, dist.center, times)
    n = nodes
    p = _gh_average(omega, dist, times, n)
    while True:
        p2 = _gh_average(omega, dist, times, 2 * n)
        err = float(np.max(np.abs(p2 - p))) if p.size else 0.0
        if err < tol:
            return RabiTrace(times, _clip(p))
        if not adaptive or 2 * n >= max_nodes:
            raise QuadratureError(
                f"Gauss-Hermite average not converged: {err:.2e} between {n} and {2 * n} nodes"
            )
        n, p = 2 * n, p2


def long_time_average(omega: float, dist: DetuningDistribution, nodes: int = 256) -> float:
    """t -> infinity limit (1/2) integral g(delta) Omega^2/(Omega^2 + delta^2)."""
    if dist.kind == "delta":
        d = dist.center
        return 0.5 * omega**2 / (omega**2 + d**2) if omega > 0 else 0.0
    x, w = _nodes(nodes)
    delta = dist.center + math.sqrt(2) * dist.sigma * x
    return float(0.5 * np.sum(w * omega**2 / (omega**2 + delta**2)) / math.sqrt(math.pi))


def damped_rabi_model(C: float, tau: float, omega: float, times) -> RabiTrace:
    """Phenomenological fit model (C/2)(1 - exp(-t/tau) cos(Omega t))."""
    if not 0 <= C <= 1:
        raise ValueError("contrast must lie in [0, 1]")
    if not tau > 0:
        raise ValueError("decay time must be positive")
    times = np.asarray(times, float)
    return RabiTrace(times, _clip(damped_rabi_values(C, tau, omega, times)))


def damped_rabi_values(C, tau, omega, times) -> np.ndarray:
    t = np.asarray(times, float)
    return 0.5 * C * (1 - np.exp(-t / tau) * np.cos(omega * t))


def lineshape_values(omega, pulse_duration, detunings, amplitude=1.0, center=0.0) -> np.ndarray:
    """Amplitude-scaled sinc^2 profile Omega^2/W^2 sin^2(W T/2), W^2 = Omega^2 + (delta - center)^2."""
    d = np.asarray(detunings, float) - center
    w2 = omega**2 + d**2
    return amplitude * omega**2 / w2 * np.sin(0.5 * np.sqrt(w2) * pulse_duration) ** 2


def lineshape(omega: float, pulse_duration: float, detunings) -> Spectrum:
    if not pulse_duration > 0:
        raise ValueError("pulse duration must be positive")
    d = np.asarray(detunings, float)
    return Spectrum(d, rabi_probability(omega, d, pulse_duration))


@dataclass(frozen=True)
class ShotSample:
    counts: np.ndarray
    shots: int

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.shots


def sample_shots(probabilities, n_shots: int, seed: int) -> ShotSample:
    """Independent binomial draws, one child stream per point.

    The streams come from ``SeedSequence(seed).spawn``, so point ``k`` always
    sees the same stream whatever the evaluation order.
    """
    if n_shots < 1:
        raise ValueError("need at least one shot per point")
    p = np.asarray(probabilities, float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities outside [0, 1]")
    flat = p.ravel()
    children = np.random.SeedSequence(seed).spawn(flat.size)
    counts = np.array(
        [np.random.Generator(np.random.PCG64(ss)).binomial(n_shots, pk) for ss, pk in zip(children, flat)],
        dtype=np.int64,
    )
    return ShotSample(counts.reshape(p.shape), int(n_shots))
