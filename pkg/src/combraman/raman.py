"""Coherent multi-path Raman engine and comb-induced light shifts.

Conventions
-----------
* The higher-frequency tooth ``n`` of a pair ``(n - q, n)`` addresses the
  lower-energy clock state; the lower tooth addresses the upper state.  The
  pair detuning from an intermediate manifold ``u`` is therefore
  ``w_n - (E_u - E_lower)``, identical for both legs.
* Zeeman splittings are ignored inside detunings (THz against MHz) but kept
  in the resonance condition.
* Because detunings do not depend on the intermediate sublevel, the sum over
  intermediate Zeeman states factorises into an angular coefficient per
  manifold times one tooth-pair sum per manifold.  The result is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.constants import c, epsilon_0

from . import _kernels
from .atomic import (
    LevelScheme,
    LevelSchemeError,
    MagneticField,
    PolarizationState,
    ZeemanState,
    half,
    linear_polarization,
    linear_zeeman_shift,
    one_photon_rabi,
)
from .comb import CombModel, SpectralEnvelope, ToothSet, enumerate_teeth, make_teeth

TWO_PI = 2 * math.pi
DEFAULT_GUARD = TWO_PI * 100e9

# Sign of the counter-rotating light-shift term.  +1 adds it with the same
# sign as the co-rotating term; -1 is the textbook second-order perturbation
# result.  Both are exposed; +1 is the default.
DEFAULT_CR_SIGN = +1.0
TEXTBOOK_CR_SIGN = -1.0


class RamanError(ValueError):
    pass


class NoToothPairsError(RamanError):
    pass


@dataclass(frozen=True)
class Resonance:
    q: int
    required_rep_rate: float
    residual: float


def resonance_condition(transition_freq: float, rep_rate: float) -> Resonance:
    """Nearest harmonic of ``rep_rate`` to ``transition_freq`` (any consistent units)."""
    if not (transition_freq > 0 and rep_rate > 0):
        raise RamanError("frequencies must be positive")
    q = max(1, int(round(transition_freq / rep_rate)))
    return Resonance(q, transition_freq / q, q * rep_rate - transition_freq)


@dataclass(frozen=True)
class TransitionSpec:
    initial: ZeemanState
    final: ZeemanState
    q: int

    def __post_init__(self):
        if self.q < 1:
            raise RamanError("harmonic order must be a positive integer")
        if abs(self.initial.mJ - self.final.mJ) > 2:
            raise RamanError("two-photon transition needs |delta m| <= 2")

    @property
    def lower(self) -> ZeemanState:
        ei, ef = self.initial.fine.energy_hz, self.final.fine.energy_hz
        return self.final if ef < ei else self.initial

    @property
    def upper(self) -> ZeemanState:
        return self.initial if self.lower is self.final else self.final

    def label(self) -> str:
        return f"{self.initial} -> {self.final}"


def transition_frequency_hz(transition: TransitionSpec | tuple, B: MagneticField | None = None) -> float:
    """Zeeman-shifted splitting |E_initial - E_final|/h including linear Zeeman terms."""
    ini, fin = (transition.initial, transition.final) if isinstance(transition, TransitionSpec) else transition
    up, lo = (ini, fin) if ini.fine.energy_hz > fin.fine.energy_hz else (fin, ini)
    nu = up.fine.energy_hz - lo.fine.energy_hz
    if B is not None:
        nu += linear_zeeman_shift(up, B) - linear_zeeman_shift(lo, B)
    return nu


def make_transition(
    levels: LevelScheme,
    m_initial,
    m_final,
    rep_rate: float,
    B: MagneticField | None = None,
    initial: str = "D5/2",
    final: str = "D3/2",
) -> TransitionSpec:
    """Build a transition and pick q from an angular repetition rate."""
    ini = levels.zeeman(initial, m_initial)
    fin = levels.zeeman(final, m_final)
    nu = transition_frequency_hz((ini, fin), B)
    res = resonance_condition(nu, rep_rate / TWO_PI)
    return TransitionSpec(ini, fin, res.q)


def tune_comb(comb: CombModel, transition: TransitionSpec, B: MagneticField | None = None) -> CombModel:
    """Return ``comb`` with the repetition rate set so that q w_r equals the transition."""
    w0 = TWO_PI * transition_frequency_hz(transition, B)
    rep = w0 / transition.q
    return replace(comb, rep_rate=rep, ceo=comb.ceo % rep)


@dataclass(frozen=True)
class RamanResult:
    omega_R: float
    complex_sum: complex
    eta: float
    eta_eff: float
    per_level: dict = field(default_factory=dict)
    omega_R_coherent: float = 0.0
    n_pairs: int = 0
    mean_detuning: float = 0.0
    residual_detuning: float = 0.0
    approximate: bool = False

    @property
    def omega_R_hz(self) -> float:
        return self.omega_R / TWO_PI


@dataclass(frozen=True)
class StarkResult:
    shift_hz: float
    counter_rotating: bool
    per_level: dict = field(default_factory=dict)


# --- Raman sums -------------------------------------------------------------


def _intermediates(levels: LevelScheme, transition: TransitionSpec):
    out = []
    for label, u in levels.states.items():
        if label in (transition.initial.fine.label, transition.final.fine.label):
            continue
        la = levels.link(u, transition.lower.fine)
        lb = levels.link(u, transition.upper.fine)
        if la is not None and lb is not None:
            out.append((u, la, lb))
    return out


def _leg(link, state: ZeemanState, inter: ZeemanState, pol: PolarizationState) -> complex:
    if link.lower.label == state.fine.label:
        return one_photon_rabi(1.0, link, state, inter, pol)
    return np.conj(one_photon_rabi(1.0, link, inter, state, pol))


def raman_angular(levels: LevelScheme, transition: TransitionSpec, pol: PolarizationState) -> dict:
    """Per-manifold path coefficient sum_i a_lower,i conj(a_upper,i) per (V/m)^2."""
    coeffs = {}
    for u, l_lo, l_up in _intermediates(levels, transition):
        k = 0j
        for m in u.sublevels:
            inter = ZeemanState(u, m)
            a_lo = _leg(l_lo, transition.lower, inter, pol)
            a_up = _leg(l_up, transition.upper, inter, pol)
            k += a_lo * np.conj(a_up)
        coeffs[u.label] = k
    return coeffs


@dataclass(frozen=True)
class _PairSums:
    phased: dict
    coherent: dict
    n_pairs: int
    mean_detuning: float
    residual: float
    approximate: bool


def _pair_sums(
    teeth: ToothSet,
    levels: LevelScheme,
    transition: TransitionSpec,
    B: MagneticField | None,
    workers: int = 1,
    constant_detuning: bool = False,
    check_resonance: bool = True,
) -> _PairSums:
    w0 = TWO_PI * transition_frequency_hz(transition, B)
    # decimated teeth carry a coarser spacing; the pair order follows it
    q = int(round(w0 / teeth.rep_rate)) if teeth.approximate else transition.q
    residual = q * teeth.rep_rate - w0
    if check_resonance and abs(residual) > 0.5 * teeth.rep_rate:
        raise RamanError("q w_r is off resonance by more than w_r/2")
    hi, lo = teeth.pairs(q)
    if hi.size == 0:
        raise NoToothPairsError("no tooth pairs separated by q exist within the truncated envelope")
    w_hi = teeth.omega[hi]
    e_prod = teeth.field[hi] * teeth.field[lo]
    dphi = teeth.phase[hi] - teeth.phase[lo]
    zero = np.zeros_like(dphi)
    inters = _intermediates(levels, transition)
    if not inters:
        raise RamanError(f"no intermediate manifold couples both legs of {transition.label()}")
    e_lower = transition.lower.fine.energy
    phased, coherent = {}, {}
    mean_det = 0.0
    for k, (u, _, _) in enumerate(inters):
        w_res = u.energy - e_lower
        if k == 0:
            mean_det = float(w_hi.mean() - w_res)
        w_eval = np.full_like(w_hi, w_hi.mean()) if constant_detuning else w_hi
        phased[u.label] = _kernels.raman_pair_sum(w_eval, e_prod, dphi, w_res, workers)
        coherent[u.label] = _kernels.raman_pair_sum(w_eval, e_prod, zero, w_res, workers)
    return _PairSums(phased, coherent, int(hi.size), mean_det, residual, teeth.approximate)


def _combine(sums: _PairSums, angular: dict, efficiency: float) -> RamanResult:
    per_level = {lbl: angular[lbl] * sums.phased[lbl] for lbl in sums.phased}
    labels = sorted(per_level)
    total = complex(sum(per_level[lbl] for lbl in labels))
    coh = complex(sum(angular[lbl] * sums.coherent[lbl] for lbl in labels))
    ratio = abs(total) / abs(coh) if abs(coh) > 0 else 1.0
    return RamanResult(
        omega_R=efficiency * abs(total),
        complex_sum=total,
        eta=efficiency,
        eta_eff=efficiency * ratio,
        per_level=per_level,
        omega_R_coherent=efficiency * abs(coh),
        n_pairs=sums.n_pairs,
        mean_detuning=sums.mean_detuning,
        residual_detuning=sums.residual,
        approximate=sums.approximate,
    )


def raman_rabi(
    comb: CombModel | None,
    levels: LevelScheme,
    transition: TransitionSpec,
    pol: PolarizationState,
    B: MagneticField | None = None,
    efficiency: float = 1.0,
    teeth: ToothSet | None = None,
    workers: int = 1,
) -> RamanResult:
    """Raman Rabi frequency from the coherent sum over tooth pairs and paths.

    ``efficiency`` is the empirical prefactor eta (<= 1) for how well the comb
    intensity is used; ``eta_eff`` adds the spectral-phase walk-off, measured
    against the same sum with all pair phases forced equal.
    """
    if not 0 <= efficiency <= 1:
        raise RamanError("efficiency must lie in [0, 1]")
    if teeth is None:
        teeth = enumerate_teeth(comb)
    sums = _pair_sums(teeth, levels, transition, B, workers)
    return _combine(sums, raman_angular(levels, transition, pol), efficiency)


def eta_eff_ratio(comb, levels, transition, pol, B=None, teeth=None) -> float:
    """|sum with pair phases| / |sum with constant pair phase|."""
    r = raman_rabi(comb, levels, transition, pol, B, teeth=teeth)
    return r.eta_eff / r.eta


@dataclass(frozen=True)
class ThetaScan:
    theta: np.ndarray
    omega_R: np.ndarray
    signed: np.ndarray

    def zero_crossings(self) -> list[float]:
        s = self.signed
        out = []
        for k in np.nonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)[0]:
            t0, t1 = self.theta[k], self.theta[k + 1]
            out.append(float(t0 - s[k] * (t1 - t0) / (s[k + 1] - s[k])))
        return out


def theta_scan(comb, levels, transition, thetas, B=None, efficiency=1.0, teeth=None) -> ThetaScan:
    """Raman Rabi frequency versus linear-polarization angle.

    ``signed`` projects the complex sum on the phase of the largest-magnitude
    point so that sign changes of the real-valued path interference show up.
    """
    if teeth is None:
        teeth = enumerate_teeth(comb)
    sums = _pair_sums(teeth, levels, transition, B)
    thetas = np.asarray(thetas, float)
    z = np.array(
        [_combine(sums, raman_angular(levels, transition, linear_polarization(t)), efficiency).complex_sum
         for t in thetas]
    )
    ref = z[np.argmax(np.abs(z))]
    phase = ref / abs(ref) if abs(ref) > 0 else 1.0
    return ThetaScan(thetas, efficiency * np.abs(z), efficiency * np.real(z * np.conj(phase)))


def two_tooth_set(omega_hi: float, q: int, rep_rate: float, intensity_each: float, phases=(0.0, 0.0)) -> ToothSet:
    """A comb reduced to one Raman pair (n - q, n) with equal intensities."""
    n = int(round(omega_hi / rep_rate))
    return make_teeth(
        [n - q, n],
        [omega_hi - q * rep_rate, omega_hi],
        [intensity_each, intensity_each],
        list(phases),
        rep_rate,
    )


def cw_rabi(levels, transition, pol, total_intensity: float, detuning: float) -> float:
    """Closed-form two-laser Raman Rabi frequency, each laser at half the intensity.

    ``detuning`` is measured for the first intermediate manifold; the others use
    the same laser frequencies.
    """
    e_half_sq = 2 * (total_intensity / 2) / (epsilon_0 * c)
    inters = _intermediates(levels, transition)
    e_lower = transition.lower.fine.energy
    w_hi = inters[0][0].energy - e_lower + detuning
    ang = raman_angular(levels, transition, pol)
    total = sum(ang[u.label] * e_half_sq / (2 * (w_hi - (u.energy - e_lower))) for u, _, _ in inters)
    return abs(total)


# --- light shifts -----------------------------------------------------------


_PURE = {
    q: PolarizationState(0.0, True, tuple(1.0 + 0j if k == q else 0j for k in (-1, 0, 1)))
    for q in (-1, 0, 1)
}


def _stark_terms(teeth, levels, state: ZeemanState, cr_sign, guard, workers):
    """Per (manifold, q): tooth sum times summed squared angular coupling."""
    terms = []
    for link in levels.links_of(state.fine):
        other = link.upper if link.lower.label == state.fine.label else link.lower
        w_gi = other.energy - state.fine.energy
        if np.min(np.abs(teeth.omega - w_gi)) < guard:
            raise RamanError(
                f"a comb tooth lies within the resonance guard of {state.fine.label}<->{other.label}"
            )
        s = _kernels.stark_sum(teeth.omega, teeth.field**2, w_gi, cr_sign, workers)
        g = np.zeros(3)
        absorbs = link.lower.label == state.fine.label
        for m in other.sublevels:
            q = (m - state.mJ) if absorbs else (state.mJ - m)
            if abs(q) > 1:
                continue
            inter = ZeemanState(other, m)
            g[int(q) + 1] += abs(_leg(link, state, inter, _PURE[int(q)])) ** 2
        terms.append((other.label, s, g))
    return terms


def _stark_from_terms(terms, pol: PolarizationState) -> tuple[float, dict]:
    wq = np.array([abs(pol.component(q)) ** 2 for q in (-1, 0, 1)])
    per = {}
    for label, s, g in terms:
        per[label] = per.get(label, 0.0) + s * float(g @ wq) / TWO_PI
    total = float(sum(per[k] for k in sorted(per)))
    return total, per


def ac_stark_shift(
    comb: CombModel | None,
    levels: LevelScheme,
    state: ZeemanState,
    pol: PolarizationState,
    counter_rotating: bool = True,
    cr_sign: float = DEFAULT_CR_SIGN,
    guard: float = DEFAULT_GUARD,
    teeth: ToothSet | None = None,
    workers: int = 1,
) -> StarkResult:
    """Comb light shift of one Zeeman sublevel in Hz.

    Sums |Omega_n|^2/(4 Delta_n) over teeth and dipole-linked sublevels plus the
    counter-rotating term with Delta+ = w_n + w_gi weighted by ``cr_sign``.
    Each Zeeman sublevel couples through a single spherical component, so the
    polarization only enters as |e_q|^2.
    """
    if teeth is None:
        teeth = enumerate_teeth(comb)
    terms = _stark_terms(teeth, levels, state, cr_sign if counter_rotating else 0.0, guard, workers)
    total, per = _stark_from_terms(terms, pol)
    return StarkResult(total, counter_rotating, per)


class _DifferentialStark:
    """Differential shift with tooth sums precomputed, cheap in the polarization."""

    def __init__(self, comb, levels, transition, counter_rotating=True, cr_sign=DEFAULT_CR_SIGN,
                 guard=DEFAULT_GUARD, teeth=None):
        if teeth is None:
            teeth = enumerate_teeth(comb)
        s = cr_sign if counter_rotating else 0.0
        self.t_ini = _stark_terms(teeth, levels, transition.initial, s, guard, 1)
        self.t_fin = _stark_terms(teeth, levels, transition.final, s, guard, 1)

    def __call__(self, pol: PolarizationState) -> float:
        return _stark_from_terms(self.t_ini, pol)[0] - _stark_from_terms(self.t_fin, pol)[0]


def differential_ac_stark(comb, levels, transition, pol, **kw) -> float:
    """Light shift of the initial minus the final state, in Hz."""
    return _DifferentialStark(comb, levels, transition, **kw)(pol)


@dataclass(frozen=True)
class MagicPolarization:
    theta: float | None
    value_at_bounds: tuple[float, float]
    iterations: int = 0

    @property
    def found(self) -> bool:
        return self.theta is not None

    @property
    def theta_deg(self) -> float | None:
        return None if self.theta is None else math.degrees(self.theta)


def find_magic_polarization(
    comb,
    levels,
    transition,
    lo: float = 0.0,
    hi: float = math.pi / 2,
    tol: float = 1e-4,
    max_iter: int = 60,
    n_bracket: int = 91,
    **kw,
) -> MagicPolarization:
    """First zero of the differential light shift in [lo, hi], by grid bracketing then bisection."""
    f = _DifferentialStark(comb, levels, transition, **kw)
    g = lambda t: f(linear_polarization(t))
    grid = np.linspace(lo, hi, n_bracket)
    vals = np.array([g(t) for t in grid])
    ends = (float(vals[0]), float(vals[-1]))
    exact = np.nonzero(vals == 0)[0]
    for k in range(n_bracket - 1):
        if vals[k] == 0:
            return MagicPolarization(float(grid[k]), ends, 0)
        if np.sign(vals[k]) * np.sign(vals[k + 1]) < 0:
            a, b, fa = grid[k], grid[k + 1], vals[k]
            it = 0
            while b - a > tol and it < max_iter:
                m = 0.5 * (a + b)
                fm = g(m)
                it += 1
                if fm == 0:
                    a = b = m
                    break
                if np.sign(fm) == np.sign(fa):
                    a, fa = m, fm
                else:
                    b = m
            return MagicPolarization(float(0.5 * (a + b)), ends, it)
    if exact.size:
        return MagicPolarization(float(grid[exact[0]]), ends, 0)
    return MagicPolarization(None, ends, 0)


# --- bandwidth study --------------------------------------------------------


@dataclass(frozen=True)
class BandwidthScan:
    ratios: np.ndarray
    rabi_ratio: np.ndarray
    n_pairs: np.ndarray


def bandwidth_scan(
    levels: LevelScheme,
    transition: TransitionSpec,
    bandwidth_ratios: Sequence[float],
    intensity: float,
    mean_detuning: float,
    rep_rate: float,
    pol: PolarizationState | None = None,
    B: MagneticField | None = None,
    truncation: float = 1e-6,
    constant_detuning: bool = True,
    waist: float = 34e-6,
) -> BandwidthScan:
    """Omega_R(fs) / Omega_R(CW) for gaussian spectra of FWHM ratio * w0.

    Total intensity and mean pair detuning are held fixed; the spectral phase is
    flat.  ``constant_detuning`` evaluates every pair at the mean detuning.
    A spectrum too narrow to hold any pair at the cutoff gives 0.
    """
    pol = pol or linear_polarization(0.0)
    w0 = TWO_PI * transition_frequency_hz(transition, B)
    res = resonance_condition(w0, rep_rate)
    trans = replace(transition, q=res.q)
    w_r = res.required_rep_rate
    inters = _intermediates(levels, trans)
    if not inters:
        raise RamanError("no intermediate manifold")
    w_res = inters[0][0].energy - trans.lower.fine.energy
    center = w_res + mean_detuning - 0.5 * w0
    cw = cw_rabi(levels, trans, pol, intensity, mean_detuning)
    ang = raman_angular(levels, trans, pol)
    out, npairs = [], []
    for r in bandwidth_ratios:
        comb = CombModel(
            rep_rate=w_r,
            ceo=center % w_r,
            envelope=SpectralEnvelope.gaussian(center, r * w0),
            avg_power=1.0,
            beam_waist=waist,
            truncation=truncation,
        ).with_intensity(intensity)
        teeth = enumerate_teeth(comb)
        try:
            sums = _pair_sums(teeth, levels, trans, B, constant_detuning=constant_detuning)
        except NoToothPairsError:
            out.append(0.0)
            npairs.append(0)
            continue
        out.append(_combine(sums, ang, 1.0).omega_R_coherent / cw)
        npairs.append(sums.n_pairs)
    return BandwidthScan(np.asarray(bandwidth_ratios, float), np.array(out), np.array(npairs))
