"""Level structure, Zeeman physics, polarization and angular-momentum algebra.

Angular momenta are handled as exact half-integers through ``Fraction`` so
that selection rules and Racah sums never suffer from rounding.  Energies are
stored in Hz relative to the S1/2 centroid; the angular-frequency views are
derived properties.

Dipole convention
-----------------
For a link ``upper -> lower`` with Einstein coefficient ``A`` and transition
angular frequency ``w`` the Wigner-Eckart reduced element obeys

    |<J_u||d||J_l>|^2 = 3 pi eps0 hbar c^3 A (2 J_u + 1) / w^3

``DipoleLink.reduced_element`` stores ``|<J_u||d||J_l>| / sqrt(2 J_l + 1)``.
With that normalisation the angular factor returned by
:func:`clebsch_gordan_coupling` sums (squared, over upper sublevels and
components) to one for every lower sublevel, and the one-photon Rabi frequency
is simply ``reduced_element / hbar * sum_q e_q * angular_q * E``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np
from scipy.constants import c, epsilon_0, h, hbar, physical_constants

MU_B = physical_constants["Bohr magneton"][0]
GAUSS = 1e-4  # tesla

REQUIRED_MANIFOLDS = ("S1/2", "P1/2", "P3/2", "D3/2", "D5/2")
REQUIRED_LINKS = (("P3/2", "D5/2"), ("P3/2", "D3/2"), ("P1/2", "D3/2"))


class LevelSchemeError(ValueError):
    pass


def half(x) -> Fraction:
    """Coerce ``x`` to an exact half-integer."""
    f = Fraction(x).limit_denominator(2)
    if f.denominator not in (1, 2) or abs(float(f) - float(x)) > 1e-9:
        raise ValueError(f"{x!r} is not a half-integer")
    return f


def lande_ls(L, S, J, g_s: float = 2.0) -> float:
    """Landé factor for pure LS coupling (g_L = 1)."""
    L, S, J = float(L), float(S), float(J)
    if J == 0:
        return 0.0
    return 1.0 + (g_s - 1.0) * (J * (J + 1) + S * (S + 1) - L * (L + 1)) / (2 * J * (J + 1))


@dataclass(frozen=True)
class FineState:
    label: str
    L: int
    S: Fraction
    J: Fraction
    energy_hz: float
    lande_g: float
    ls: bool = False

    def __post_init__(self):
        object.__setattr__(self, "S", half(self.S))
        object.__setattr__(self, "J", half(self.J))
        if not abs(self.L - self.S) <= self.J <= self.L + self.S:
            raise LevelSchemeError(f"{self.label}: J={self.J} outside |L-S|..L+S")
        if (self.J - self.L - self.S).denominator != 1:
            raise LevelSchemeError(f"{self.label}: J, L, S parity mismatch")
        if not math.isfinite(self.lande_g):
            raise LevelSchemeError(f"{self.label}: non-finite Landé factor")
        if self.ls and abs(self.lande_g - lande_ls(self.L, self.S, self.J)) > 1e-12:
            raise LevelSchemeError(f"{self.label}: Landé factor inconsistent with LS coupling")

    @property
    def energy(self) -> float:
        """Angular frequency above the S1/2 centroid (rad/s)."""
        return 2 * math.pi * self.energy_hz

    @property
    def sublevels(self) -> list[Fraction]:
        return [-self.J + k for k in range(int(2 * self.J) + 1)]


@dataclass(frozen=True)
class ZeemanState:
    fine: FineState
    mJ: Fraction

    def __post_init__(self):
        object.__setattr__(self, "mJ", half(self.mJ))
        if abs(self.mJ) > self.fine.J or (self.fine.J - self.mJ).denominator != 1:
            raise ValueError(f"mJ={self.mJ} not a sublevel of {self.fine.label}")

    def __str__(self):
        return f"|{self.fine.label}, {self.mJ}>"


@dataclass(frozen=True)
class DipoleLink:
    upper: FineState
    lower: FineState
    einstein_A: float
    einstein_A_sigma: float = 0.0

    def __post_init__(self):
        if not self.einstein_A > 0:
            raise LevelSchemeError(f"{self.upper.label}->{self.lower.label}: A must be positive")
        if self.einstein_A_sigma < 0:
            raise LevelSchemeError("negative A uncertainty")
        if abs(self.upper.J - self.lower.J) > 1 or (self.upper.J == 0 and self.lower.J == 0):
            raise LevelSchemeError(
                f"{self.upper.label}->{self.lower.label}: violates dipole selection rule"
            )
        if abs(self.upper.L - self.lower.L) != 1:
            raise LevelSchemeError(f"{self.upper.label}->{self.lower.label}: parity forbids E1")
        if self.upper.energy_hz <= self.lower.energy_hz:
            raise LevelSchemeError(f"{self.upper.label} is not above {self.lower.label}")

    @property
    def omega(self) -> float:
        return self.upper.energy - self.lower.energy

    @property
    def reduced_element(self) -> float:
        """Dipole scale in C m, normalised per lower sublevel (see module docstring)."""
        return reduced_element_from_A(
            self.einstein_A, self.omega, self.upper.J, self.lower.J
        )


def reduced_element_from_A(A: float, omega: float, J_upper, J_lower) -> float:
    gu = 2 * float(J_upper) + 1
    gl = 2 * float(J_lower) + 1
    return math.sqrt(3 * math.pi * epsilon_0 * hbar * c**3 * A * gu / (gl * omega**3))


def einstein_A_from_element(element: float, omega: float, J_upper, J_lower) -> float:
    gu = 2 * float(J_upper) + 1
    gl = 2 * float(J_lower) + 1
    return element**2 * gl * omega**3 / (3 * math.pi * epsilon_0 * hbar * c**3 * gu)


@dataclass(frozen=True)
class PolarizationState:
    """Light polarization in the spherical basis, indexed by the Δm it drives.

    ``spherical`` holds ``(e_-1, e_0, e_+1)``; ``e_q`` is the amplitude that
    drives ``m_upper = m_lower + q`` in absorption.
    """

    theta: float
    perpendicular: bool
    spherical: tuple[complex, complex, complex]

    def __post_init__(self):
        norm = sum(abs(x) ** 2 for x in self.spherical)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"polarization not normalised (|e|^2 = {norm})")

    def component(self, q: int) -> complex:
        return self.spherical[q + 1]


def linear_polarization(theta: float, perpendicular: bool = True) -> PolarizationState:
    """Linear polarization at angle ``theta``.

    With ``perpendicular`` (k normal to B) ``theta`` is the angle between E and
    the quantization axis; otherwise k is along B and ``theta`` is the azimuth
    of E in the transverse plane.
    """
    if perpendicular:
        s = math.sin(theta) / math.sqrt(2)
        sph = (complex(s), complex(math.cos(theta)), complex(-s))
    else:
        sph = (
            complex(np.exp(1j * theta) / math.sqrt(2)),
            0j,
            complex(-np.exp(-1j * theta) / math.sqrt(2)),
        )
    # renormalise away the last-ulp drift of cos^2 + sin^2
    n = math.sqrt(sum(abs(x) ** 2 for x in sph))
    return PolarizationState(theta, perpendicular, tuple(x / n for x in sph))


@dataclass(frozen=True)
class MagneticField:
    magnitude: float  # tesla
    sigma: float = 0.0

    def __post_init__(self):
        if self.magnitude < 0 or self.sigma < 0:
            raise ValueError("field magnitude and uncertainty must be non-negative")

    @classmethod
    def from_gauss(cls, B: float, sigma: float = 0.0) -> "MagneticField":
        return cls(B * GAUSS, sigma * GAUSS)


@dataclass(frozen=True)
class LevelScheme:
    states: Mapping[str, FineState]
    links: tuple[DipoleLink, ...] = field(default_factory=tuple)

    def __getitem__(self, label: str) -> FineState:
        try:
            return self.states[label]
        except KeyError:
            raise LevelSchemeError(f"unknown manifold {label!r}") from None

    def zeeman(self, label: str, mJ) -> ZeemanState:
        return ZeemanState(self[label], half(mJ))

    def link(self, a: FineState | str, b: FineState | str) -> DipoleLink | None:
        """Dipole link between two manifolds in either order, or None."""
        la = a if isinstance(a, str) else a.label
        lb = b if isinstance(b, str) else b.label
        for lk in self.links:
            if {lk.upper.label, lk.lower.label} == {la, lb}:
                return lk
        return None

    def links_of(self, state: FineState) -> list[DipoleLink]:
        return [lk for lk in self.links if state.label in (lk.upper.label, lk.lower.label)]

    def gap_hz(self, a: str, b: str) -> float:
        """Energy of ``a`` minus energy of ``b`` in Hz."""
        return self[a].energy_hz - self[b].energy_hz

    def fine_structure_gap_hz(self) -> float:
        return self.gap_hz("D5/2", "D3/2")


def build_level_scheme(
    manifolds: Iterable[Mapping],
    links: Iterable[Mapping],
    required_manifolds: Iterable[str] = REQUIRED_MANIFOLDS,
    required_links: Iterable[tuple[str, str]] = REQUIRED_LINKS,
) -> LevelScheme:
    """Instantiate and validate a level scheme from plain mappings.

    Manifold entries carry ``label, L, S, J, energy_Hz`` and either
    ``g_factor`` or ``ls=True``; link entries carry ``upper, lower, A_per_s``
    and optionally ``A_sigma_per_s``.
    """
    states: dict[str, FineState] = {}
    for m in manifolds:
        label = m["label"]
        if label in states:
            raise LevelSchemeError(f"duplicate manifold {label!r}")
        ls = bool(m.get("ls", False))
        g = m.get("g_factor")
        if g is None:
            if not ls:
                raise LevelSchemeError(f"{label}: needs g_factor or ls flag")
            g = lande_ls(m["L"], m["S"], m["J"])
        states[label] = FineState(
            label, int(m["L"]), half(m["S"]), half(m["J"]), float(m["energy_Hz"]), float(g), ls
        )
    missing = [r for r in required_manifolds if r not in states]
    if missing:
        raise LevelSchemeError(f"missing manifolds: {', '.join(missing)}")
    if "S1/2" in states and states["S1/2"].energy_hz != 0.0:
        raise LevelSchemeError("energy zero must be the S1/2 centroid")

    built = []
    for lk in links:
        for key in ("upper", "lower"):
            if lk[key] not in states:
                raise LevelSchemeError(f"link references unknown manifold {lk[key]!r}")
        built.append(
            DipoleLink(
                states[lk["upper"]],
                states[lk["lower"]],
                float(lk["A_per_s"]),
                float(lk.get("A_sigma_per_s", 0.0)),
            )
        )
    have = {(lk.upper.label, lk.lower.label) for lk in built}
    if len(have) != len(built):
        raise LevelSchemeError("duplicate dipole link")
    absent = [f"{u}->{l}" for u, l in required_links if (u, l) not in have]
    if absent:
        raise LevelSchemeError(f"missing dipole links: {', '.join(absent)}")
    return LevelScheme(states, tuple(built))


def linear_zeeman_shift(state: ZeemanState, B: MagneticField) -> float:
    """First-order Zeeman shift g_J mJ mu_B B / h in Hz."""
    return state.fine.lande_g * float(state.mJ) * MU_B * B.magnitude / h


# --- angular momentum -------------------------------------------------------


def _fact(n: Fraction) -> int:
    assert n.denominator == 1 and n >= 0
    return math.factorial(int(n))


@lru_cache(maxsize=None)
def _cg_exact(j1: Fraction, m1: Fraction, j2: Fraction, m2: Fraction, J: Fraction, M: Fraction):
    """Squared magnitude and sign of <j1 m1; j2 m2 | J M> via Racah's formula."""
    if m1 + m2 != M:
        return Fraction(0), 0
    if not abs(j1 - j2) <= J <= j1 + j2:
        return Fraction(0), 0
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return Fraction(0), 0
    for jj, mm in ((j1, m1), (j2, m2), (J, M)):
        if (jj - mm).denominator != 1:
            return Fraction(0), 0
    if (j1 + j2 + J).denominator != 1:
        return Fraction(0), 0
    pre = Fraction(
        (2 * J + 1) * _fact(J + j1 - j2) * _fact(J - j1 + j2) * _fact(j1 + j2 - J),
        _fact(j1 + j2 + J + 1),
    )
    pre *= (
        _fact(J + M) * _fact(J - M) * _fact(j1 - m1) * _fact(j1 + m1) * _fact(j2 - m2) * _fact(j2 + m2)
    )
    total = Fraction(0)
    kmin = max(0, int(j2 - J - m1), int(j1 + m2 - J))
    kmax = min(int(j1 + j2 - J), int(j1 - m1), int(j2 + m2))
    for k in range(kmin, kmax + 1):
        den = (
            _fact(Fraction(k))
            * _fact(j1 + j2 - J - k)
            * _fact(j1 - m1 - k)
            * _fact(j2 + m2 - k)
            * _fact(J - j2 + m1 + k)
            * _fact(J - j1 - m2 + k)
        )
        total += Fraction((-1) ** k, den)
    if total == 0:
        return Fraction(0), 0
    return pre * total * total, (1 if total > 0 else -1)


def clebsch_gordan(j1, m1, j2, m2, J, M) -> float:
    """Condon-Shortley Clebsch-Gordan coefficient <j1 m1; j2 m2 | J M>."""
    sq, sign = _cg_exact(half(j1), half(m1), half(j2), half(m2), half(J), half(M))
    return sign * math.sqrt(sq)


def wigner_3j(j1, j2, j3, m1, m2, m3) -> float:
    j1, j2, j3, m1, m2, m3 = map(half, (j1, j2, j3, m1, m2, m3))
    if m1 + m2 + m3 != 0:
        return 0.0
    phase = -1 if int(j1 - j2 - m3) % 2 else 1
    return phase * clebsch_gordan(j1, m1, j2, m2, j3, -m3) / math.sqrt(float(2 * j3 + 1))


def clebsch_gordan_coupling(lower: ZeemanState, upper: ZeemanState, component: int) -> float:
    """Angular factor for absorption ``lower -> upper`` by spherical ``component``.

    Equals sqrt((2J_l+1)/(2J_u+1)) <J_l m_l; 1 q | J_u m_u>, so the squares sum
    to one over upper sublevels and components for any lower sublevel.
    """
    if component not in (-1, 0, 1):
        raise ValueError("component must be -1, 0 or +1")
    Jl, Ju = lower.fine.J, upper.fine.J
    if abs(Jl - Ju) > 1 or abs(lower.fine.L - upper.fine.L) != 1:
        raise LevelSchemeError(f"{lower.fine.label} and {upper.fine.label} are not dipole-linked")
    if upper.mJ != lower.mJ + component:
        return 0.0
    cg = clebsch_gordan(Jl, lower.mJ, 1, component, Ju, upper.mJ)
    return math.sqrt(float(2 * Jl + 1) / float(2 * Ju + 1)) * cg


def one_photon_rabi(
    tooth_field: float,
    link: DipoleLink,
    lower: ZeemanState,
    upper: ZeemanState,
    pol: PolarizationState,
) -> complex:
    """Complex one-photon Rabi frequency (rad/s) for a field amplitude in V/m."""
    if tooth_field < 0:
        raise ValueError("field amplitude must be non-negative")
    if {lower.fine.label, upper.fine.label} != {link.lower.label, link.upper.label}:
        raise LevelSchemeError("states do not belong to the given link")
    amp = 0j
    for q in (-1, 0, 1):
        e = pol.component(q)
        if e != 0:
            amp += e * clebsch_gordan_coupling(lower, upper, q)
    return link.reduced_element / hbar * amp * tooth_field
