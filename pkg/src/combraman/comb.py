"""Frequency-comb model: tooth grid, spectral envelopes and spectral phase.

All frequencies are angular (rad/s) unless a name says ``_hz``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from scipy.constants import c, epsilon_0

TWO_PI = 2 * math.pi
TBP_GAUSSIAN = 2 * math.log(2) / math.pi  # ~0.441

_trapz = getattr(np, "trapezoid", None) or np.trapz


class CombError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralEnvelope:
    """Relative spectral intensity, peak normalised to one."""

    kind: str
    center: float = 0.0
    fwhm: float = 0.0
    omega: np.ndarray | None = field(default=None, repr=False)
    intensity: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.fwhm > 0:
                raise CombError("gaussian FWHM must be positive")
        elif self.kind == "tabulated":
            w = np.asarray(self.omega, dtype=float)
            s = np.asarray(self.intensity, dtype=float)
            if w.ndim != 1 or w.shape != s.shape or w.size < 2:
                raise CombError("tabulated envelope needs at least two (omega, intensity) samples")
            if np.any(np.diff(w) <= 0):
                raise CombError("tabulated frequencies must be strictly increasing")
            if np.any(s < 0) or not np.all(np.isfinite(s)):
                raise CombError("spectral intensity must be finite and non-negative")
            peak = s.max()
            if peak <= 0:
                raise CombError("spectrum has no weight")
            object.__setattr__(self, "omega", w)
            object.__setattr__(self, "intensity", s / peak)
        else:
            raise CombError(f"unknown envelope kind {self.kind!r}")

    @classmethod
    def gaussian(cls, center: float, fwhm: float) -> "SpectralEnvelope":
        return cls("gaussian", center=center, fwhm=fwhm)

    @classmethod
    def tabulated(cls, omega, intensity) -> "SpectralEnvelope":
        return cls("tabulated", omega=np.asarray(omega, float), intensity=np.asarray(intensity, float))

    def __call__(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if self.kind == "gaussian":
            x = (omega - self.center) / self.fwhm
            return np.exp(-4 * math.log(2) * x * x)
        return np.interp(omega, self.omega, self.intensity, left=0.0, right=0.0)

    def support(self, truncation: float) -> tuple[float, float]:
        """Frequency interval outside which the envelope is below ``truncation``."""
        if self.kind == "gaussian":
            half_width = 0.5 * self.fwhm * math.sqrt(math.log(1 / truncation) / math.log(2))
            return self.center - half_width, self.center + half_width
        return float(self.omega[0]), float(self.omega[-1])

    @property
    def center_of_mass(self) -> float:
        if self.kind == "gaussian":
            return self.center
        return float(_trapz(self.omega * self.intensity, self.omega) / _trapz(self.intensity, self.omega))


@dataclass(frozen=True)
class SpectralPhase:
    phi0: float = 0.0
    tau_g: float = 0.0
    D2: float = 0.0
    omega_c: float = 0.0
    residual_omega: np.ndarray | None = field(default=None, repr=False)
    residual_phase: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if (self.residual_omega is None) != (self.residual_phase is None):
            raise CombError("residual phase needs both frequencies and values")
        if self.residual_omega is not None:
            w = np.asarray(self.residual_omega, float)
            p = np.asarray(self.residual_phase, float)
            if w.shape != p.shape or w.size < 2 or np.any(np.diff(w) <= 0):
                raise CombError("residual phase samples must be >= 2 and strictly increasing")
            object.__setattr__(self, "residual_omega", w)
            object.__setattr__(self, "residual_phase", p)

    @property
    def has_residual(self) -> bool:
        return self.residual_omega is not None

    def residual(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        if not self.has_residual:
            return np.zeros_like(omega)
        return np.interp(omega, self.residual_omega, self.residual_phase)


def spectral_phase_at(phase: SpectralPhase, omega) -> np.ndarray | float:
    """phi0 + tau_g (w - w_c) + D2/2 (w - w_c)^2 + residual(w)."""
    x = np.asarray(omega, dtype=float) - phase.omega_c
    out = phase.phi0 + phase.tau_g * x + 0.5 * phase.D2 * x * x + phase.residual(omega)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CombModel:
    rep_rate: float
    ceo: float
    envelope: SpectralEnvelope
    phase: SpectralPhase = SpectralPhase()
    avg_power: float = 0.0
    beam_waist: float = 1.0
    truncation: float = 1e-6

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise CombError("repetition rate must be positive")
        if not 0 <= self.ceo < self.rep_rate:
            raise CombError("CEO frequency must lie in [0, rep_rate)")
        if self.avg_power < 0:
            raise CombError("average power must be non-negative")
        if not self.beam_waist > 0:
            raise CombError("beam waist must be positive")
        if not 0 < self.truncation < 1:
            raise CombError("truncation must lie in (0, 1)")

    @property
    def peak_intensity(self) -> float:
        """On-axis intensity 2P/(pi w^2) in W/m^2."""
        return 2 * self.avg_power / (math.pi * self.beam_waist**2)

    def with_intensity(self, intensity: float) -> "CombModel":
        return replace(self, avg_power=intensity * math.pi * self.beam_waist**2 / 2)

    def tooth_frequency(self, n) -> np.ndarray:
        return np.asarray(n) * self.rep_rate + self.ceo


class Tooth(NamedTuple):
    index: int
    omega: float
    intensity: float
    field: float
    phase: float


@dataclass(frozen=True)
class ToothSet:
    """Comb teeth as parallel arrays, ascending in index."""

    index: np.ndarray
    omega: np.ndarray
    intensity: np.ndarray
    field: np.ndarray
    phase: np.ndarray
    rep_rate: float
    approximate: bool = False

    def __len__(self) -> int:
        return int(self.index.size)

    def __getitem__(self, k: int) -> Tooth:
        return Tooth(int(self.index[k]), float(self.omega[k]), float(self.intensity[k]),
                     float(self.field[k]), float(self.phase[k]))

    def __iter__(self) -> Iterator[Tooth]:
        return (self[k] for k in range(len(self)))

    @property
    def total_intensity(self) -> float:
        return float(self.intensity.sum())

    def pairs(self, q: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions (hi, lo) of every pair with index[hi] - index[lo] == q."""
        lo = np.searchsorted(self.index, self.index - q)
        lo = np.clip(lo, 0, len(self) - 1)
        ok = self.index[lo] == self.index - q
        hi = np.nonzero(ok)[0]
        return hi, lo[ok]


def field_amplitude(intensity) -> np.ndarray:
    """Peak field (V/m) of a monochromatic wave of the given intensity."""
    return np.sqrt(2 * np.asarray(intensity, dtype=float) / (epsilon_0 * c))


def make_teeth(index, omega, intensity, phase, rep_rate, approximate=False) -> ToothSet:
    index = np.asarray(index, dtype=np.int64)
    order = np.argsort(index, kind="stable")
    intensity = np.asarray(intensity, float)[order]
    return ToothSet(
        index[order],
        np.asarray(omega, float)[order],
        intensity,
        field_amplitude(intensity),
        np.asarray(phase, float)[order],
        float(rep_rate),
        approximate,
    )


def enumerate_teeth(comb: CombModel) -> ToothSet:
    """Teeth whose envelope exceeds ``truncation`` times its peak.

    Intensities are renormalised so that they sum to the on-axis peak intensity
    of the beam.
    """
    w_lo, w_hi = comb.envelope.support(comb.truncation)
    n_lo = math.ceil((w_lo - comb.ceo) / comb.rep_rate)
    n_hi = math.floor((w_hi - comb.ceo) / comb.rep_rate)
    if n_hi < n_lo:
        raise CombError("envelope contains no comb tooth")
    n = np.arange(n_lo, n_hi + 1, dtype=np.int64)
    w = n * comb.rep_rate + comb.ceo
    env = comb.envelope(w)
    keep = env > comb.truncation
    if not keep.any():
        raise CombError("envelope lies entirely below the truncation cutoff")
    n, w, env = n[keep], w[keep], env[keep]
    intensity = env / env.sum() * comb.peak_intensity
    phase = np.asarray(spectral_phase_at(comb.phase, w), dtype=float).reshape(w.shape)
    return make_teeth(n, w, intensity, phase, comb.rep_rate)


def decimate(teeth: ToothSet, b: int) -> ToothSet:
    """Bin ``b`` adjacent teeth into super-teeth carrying the summed intensity.

    The result is flagged approximate; pair sums on it need q divisible by b.
    """
    if b < 1:
        raise CombError("decimation factor must be >= 1")
    if b == 1:
        return teeth
    group = np.floor_divide(teeth.index, b)
    uniq, inv = np.unique(group, return_inverse=True)
    inten = np.bincount(inv, weights=teeth.intensity)
    w_centroid = np.bincount(inv, weights=teeth.intensity * teeth.omega) / np.where(inten > 0, inten, 1)
    phase = np.bincount(inv, weights=teeth.intensity * teeth.phase) / np.where(inten > 0, inten, 1)
    return make_teeth(uniq, w_centroid, inten, phase, teeth.rep_rate * b, approximate=True)


# --- spectral phase fitting -----------------------------------------------


def fit_spectral_phase(omega, phase, weight=None, omega_c: float | None = None):
    """Weighted quadratic fit of measured spectral phase about ``omega_c``.

    Returns ``(SpectralPhase, covariance)`` with the covariance ordered as
    (phi0, tau_g, D2).  Fit residuals are kept as the tabulated residual.
    """
    w = np.asarray(omega, float)
    p = np.asarray(phase, float)
    wt = np.ones_like(w) if weight is None else np.asarray(weight, float)
    if w.shape != p.shape or w.shape != wt.shape:
        raise CombError("omega, phase and weight must have equal length")
    if w.size < 3:
        raise CombError("need at least three phase samples")
    if np.any(wt <= 0):
        raise CombError("weights must be positive")
    if omega_c is None:
        omega_c = float(np.sum(wt * w) / np.sum(wt))
    x = w - omega_c
    scale = float(np.max(np.abs(x))) or 1.0
    u = x / scale
    design = np.column_stack([np.ones_like(u), u, 0.5 * u * u])
    sw = np.sqrt(wt)
    a = design * sw[:, None]
    if np.linalg.matrix_rank(a) < 3:
        raise CombError("rank-deficient phase design (need three distinct frequencies)")
    coef, *_ = np.linalg.lstsq(a, p * sw, rcond=None)
    resid = p - design @ coef
    dof = w.size - 3
    cov_u = np.linalg.inv(a.T @ a)
    if dof > 0:
        chi2 = float(np.sum(wt * resid**2))
        cov_u = cov_u * max(1.0, chi2 / dof)
    unscale = np.array([1.0, 1.0 / scale, 1.0 / scale**2])
    est = coef * unscale
    cov = cov_u * np.outer(unscale, unscale)
    order = np.argsort(w)
    ws, rs = w[order], resid[order]
    if np.any(np.diff(ws) <= 0):
        ws, idx = np.unique(ws, return_index=True)
        rs = rs[idx]
    res_kw = {}
    if ws.size >= 2:
        res_kw = dict(residual_omega=ws, residual_phase=rs)
    fitted = SpectralPhase(float(est[0]), float(est[1]), float(est[2]), float(omega_c), **res_kw)
    return fitted, cov


# --- file formats ---------------------------------------------------------


def _read_csv(path, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise CombError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if tuple(header[: len(required)]) != required or any(h not in optional for h in header[len(required):]):
        raise CombError(f"{path}: expected header {','.join(required + optional)}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    return header, data


def load_spectrum(path: str | Path) -> SpectralEnvelope:
    """Read ``wavelength_nm,intensity`` and convert to a density in angular frequency.

    S_w = S_lambda |d lambda / d w| = S_lambda lambda^2 / (2 pi c).
    """
    _, data = _read_csv(path, ("wavelength_nm", "intensity"))
    if data.shape[0] < 2:
        raise CombError(f"{path}: need at least two rows")
    lam = data[:, 0] * 1e-9
    s_lam = data[:, 1]
    if np.any(lam <= 0):
        raise CombError(f"{path}: wavelengths must be positive")
    if np.any(s_lam < 0):
        raise CombError(f"{path}: negative intensity")
    if not np.any(s_lam > 0):
        raise CombError(f"{path}: intensity column is all zero")
    omega = TWO_PI * c / lam
    s_w = s_lam * lam**2 / (TWO_PI * c)
    order = np.argsort(omega)
    omega, s_w = omega[order], s_w[order]
    if np.any(np.diff(omega) <= 0):
        raise CombError(f"{path}: duplicate wavelengths")
    return SpectralEnvelope.tabulated(omega, s_w)


def load_phase_samples(path: str | Path):
    """Read ``freq_THz,phase_rad[,weight]``; returns (omega, phase, weight)."""
    header, data = _read_csv(path, ("freq_THz", "phase_rad"), ("weight",))
    omega = TWO_PI * data[:, 0] * 1e12
    weight = data[:, 2] if len(header) == 3 else np.ones(data.shape[0])
    return omega, data[:, 1], weight


def fourier_limited_bandwidth(pulse_fwhm: float) -> float:
    """Spectral FWHM (rad/s) of a transform-limited gaussian pulse."""
    if not pulse_fwhm > 0:
        raise CombError("pulse duration must be positive")
    return TWO_PI * TBP_GAUSSIAN / pulse_fwhm


def fourier_limited_duration(bandwidth_fwhm: float) -> float:
    """Inverse of :func:`fourier_limited_bandwidth`."""
    if not bandwidth_fwhm > 0:
        raise CombError("bandwidth must be positive")
    return TWO_PI * TBP_GAUSSIAN / bandwidth_fwhm
