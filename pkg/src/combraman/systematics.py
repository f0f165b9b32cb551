"""Systematic shifts of the D5/2 - D3/2 splitting and the error budget."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Mapping

import numpy as np
from scipy.constants import atomic_mass, e, h, physical_constants

from .atomic import MU_B, LevelScheme, MagneticField, ZeemanState, clebsch_gordan, half, lande_ls

G_S = -physical_constants["electron g factor"][0]  # 2.00231930436...
A0 = physical_constants["Bohr radius"][0]
AU_POLARIZABILITY = physical_constants["atomic unit of electric polarizability"][0]
BBR_FIELD_300K = 831.9  # rms field of 300 K black-body radiation, V/m
CA40_MASS = 39.962590863 * atomic_mass


class SystematicsError(ValueError):
    pass


class LevelCrossingError(SystematicsError):
    pass


# --- second-order Zeeman ----------------------------------------------------


def _angular_matrices(j):
    j = half(j)
    ms = [j - k for k in range(int(2 * j) + 1)]  # descending
    n = len(ms)
    jz = np.diag([float(m) for m in ms])
    jp = np.zeros((n, n))
    for a in range(1, n):
        m = ms[a]
        jp[a - 1, a] = math.sqrt(float(j * (j + 1) - m * (m + 1)))
    return ms, jz, jp, jp.T.copy()


def d_manifold_hamiltonian(levels: LevelScheme, B_tesla: float, g_s: float = G_S,
                           upper: str = "D5/2", lower: str = "D3/2"):
    """Fine-structure plus Zeeman operator zeta L.S + mu_B B (Lz + g_s Sz) / h.

    Energies are relative to ``offset`` (Hz), chosen so that at B = 0 the
    eigenvalues plus ``offset`` equal the configured manifold energies.
    Returns ``(basis, H, offset)``; ``basis`` lists (mL, mS).
    """
    up, lo = levels[upper], levels[lower]
    if up.L != lo.L or up.S != lo.S:
        raise SystematicsError("the two manifolds must share L and S")
    if {up.J, lo.J} != {up.L + up.S, up.L - up.S}:
        raise SystematicsError("manifolds must be the two fine-structure partners")
    L, S = up.L, up.S
    mls, lz, lp, lm = _angular_matrices(L)
    mss, sz, sp, sm = _angular_matrices(S)
    il, is_ = np.eye(lz.shape[0]), np.eye(sz.shape[0])
    ls = np.kron(lz, sz) + 0.5 * (np.kron(lp, sm) + np.kron(lm, sp))
    zeeman = np.kron(lz, is_) + g_s * np.kron(il, sz)
    jhi = float(L + S)
    jlo = float(L - S)
    zeta = (up.energy_hz - lo.energy_hz) / (
        0.5 * (jhi * (jhi + 1) - jlo * (jlo + 1))
    ) if up.J > lo.J else None
    if zeta is None:
        raise SystematicsError("upper manifold must have the larger J")
    # eigenvalue of L.S for J = L - S, used to anchor the offset
    ls_lo = 0.5 * (jlo * (jlo + 1) - L * (L + 1) - float(S * (S + 1)))
    offset = lo.energy_hz - zeta * ls_lo
    H = zeta * ls + (MU_B * B_tesla / h) * zeeman
    basis = tuple((ml, ms) for ml in mls for ms in mss)
    return basis, H, offset


def _coupled_vector(basis, L, S, J, mJ):
    v = np.zeros(len(basis))
    for k, (ml, ms) in enumerate(basis):
        if ml + ms == mJ:
            v[k] = clebsch_gordan(L, ml, S, ms, J, mJ)
    return v


def _identify(levels, B_tesla, g_s, mJ, upper="D5/2", lower="D3/2"):
    basis, H, offset = d_manifold_hamiltonian(levels, B_tesla, g_s, upper, lower)
    vals, vecs = np.linalg.eigh(H)
    up, lo = levels[upper], levels[lower]
    out = {}
    taken = set()
    for st in (up, lo):
        v = _coupled_vector(basis, st.L, st.S, st.J, half(mJ))
        ov = np.abs(vecs.T @ v) ** 2
        k = int(np.argmax(ov))
        if ov[k] < 0.5 or k in taken:
            raise LevelCrossingError(f"cannot identify |{st.label}, {mJ}> at B = {B_tesla} T")
        taken.add(k)
        out[st.label] = vals[k]
    return out[upper] - out[lower]


@dataclass(frozen=True)
class ZeemanShift:
    shift_hz: float
    sigma_field_hz: float
    sigma_model_hz: float
    g_s: float

    @property
    def sigma_hz(self) -> float:
        return self.sigma_field_hz


def second_order_zeeman_value(levels: LevelScheme, B_tesla: float, mJ, g_s: float = G_S,
                              upper: str = "D5/2", lower: str = "D3/2") -> float:
    up, lo = levels[upper], levels[lower]
    mJ = half(mJ)
    if abs(mJ) > min(up.J, lo.J):
        raise SystematicsError(f"mJ = {mJ} does not exist in both manifolds")
    split = _identify(levels, B_tesla, g_s, mJ, upper, lower)
    split0 = _identify(levels, 0.0, g_s, mJ, upper, lower)
    # the linear part uses Lande factors from the same g_s as the operator
    dg = lande_ls(up.L, up.S, up.J, g_s) - lande_ls(lo.L, lo.S, lo.J, g_s)
    return float(split - split0 - dg * float(mJ) * MU_B * B_tesla / h)


def second_order_zeeman(levels: LevelScheme, B: MagneticField, mJ, g_s: float = G_S,
                        upper: str = "D5/2", lower: str = "D3/2") -> ZeemanShift:
    """Quadratic Zeeman shift of the |upper, mJ> - |lower, mJ> splitting in Hz.

    ``sigma_field_hz`` propagates the field uncertainty by central differences.
    ``sigma_model_hz`` is the change when g_s is replaced by exactly 2, a scale
    for the operator-convention uncertainty.
    """
    f = lambda b, g=g_s: second_order_zeeman_value(levels, b, mJ, g, upper, lower)
    val = f(B.magnitude)
    sig_b = 0.0
    if B.sigma > 0:
        # a step of a few percent of B keeps eigenvalue round-off (~1e-4 Hz on a
        # THz splitting) out of the derivative; the B^4 curvature is negligible
        hstep = max(B.sigma, 0.05 * B.magnitude, 1e-9)
        d = (f(B.magnitude + hstep) - f(max(B.magnitude - hstep, 0.0))) / (
            B.magnitude + hstep - max(B.magnitude - hstep, 0.0)
        )
        sig_b = abs(d) * B.sigma
    model = abs(val - f(B.magnitude, 2.0))
    return ZeemanShift(val, sig_b, model, g_s)


def second_order_zeeman_perturbative(levels: LevelScheme, B: MagneticField, mJ,
                                     upper: str = "D5/2", lower: str = "D3/2") -> float:
    """Second-order perturbation estimate with g_s = 2.

    Only S_z mixes the two fine-structure partners; each level is pushed away
    from the other by (mu_B B <up|Sz|lo>)^2 / (h nu), so the splitting grows
    by twice that amount.
    """
    up, lo = levels[upper], levels[lower]
    L, S = up.L, up.S
    mJ = half(mJ)
    # <J' mJ| S_z |J mJ> from the product-basis decomposition; with g_s = 2 the
    # coupling operator Lz + 2 Sz = Jz + Sz is off-diagonal only through Sz
    elem = 0.0
    for ms in (S - k for k in range(int(2 * S) + 1)):
        ml = mJ - ms
        if abs(ml) > L:
            continue
        elem += (clebsch_gordan(L, ml, S, ms, up.J, mJ) * clebsch_gordan(L, ml, S, ms, lo.J, mJ)
                 * float(ms))
    nu = up.energy_hz - lo.energy_hz
    return 2 * (elem * MU_B * B.magnitude / h) ** 2 / nu


# --- electric quadrupole ----------------------------------------------------


@dataclass(frozen=True)
class TrapConfig:
    axial_frequency: float  # rad/s
    radial_frequency: float  # rad/s
    mass: float = CA40_MASS
    charge: float = e
    quadrupole_moments: Mapping[str, float] = field(default_factory=dict)  # units of e a0^2
    angle_factor: float = 1.0

    def __post_init__(self):
        if not (self.axial_frequency > 0 and self.radial_frequency > 0):
            raise SystematicsError("trap frequencies must be positive")
        if not (self.mass > 0 and self.charge > 0):
            raise SystematicsError("mass and charge must be positive")

    @property
    def field_gradient(self) -> float:
        """Axial DC field gradient m w_z^2 / q in V/m^2."""
        return self.mass * self.axial_frequency**2 / self.charge


def geometric_angle_factor(beta: float) -> float:
    """(3 cos^2 beta - 1)/2 for a field at angle beta to the trap axis."""
    return 0.5 * (3 * math.cos(beta) ** 2 - 1)


def quadrupole_bracket(J, mJ) -> float:
    J, mJ = half(J), half(mJ)
    if J < 1:
        return 0.0
    return float((J * (J + 1) - 3 * mJ * mJ) / (J * (2 * J - 1)))


def quadrupole_shift(trap: TrapConfig, state: ZeemanState) -> float:
    """Static quadrupole shift of one sublevel in Hz.

    (1/2) Theta(J) (dE/dz) [J(J+1) - 3 mJ^2] / [J(2J - 1)] times the angle factor.
    """
    label = state.fine.label
    if label not in trap.quadrupole_moments:
        raise SystematicsError(f"no quadrupole moment configured for {label}")
    theta = trap.quadrupole_moments[label] * e * A0**2
    return (0.5 * theta * trap.field_gradient * quadrupole_bracket(state.fine.J, state.mJ)
            * trap.angle_factor / h)


def differential_quadrupole(trap: TrapConfig, upper: ZeemanState, lower: ZeemanState) -> float:
    return quadrupole_shift(trap, upper) - quadrupole_shift(trap, lower)


# --- black-body radiation ---------------------------------------------------


def bbr_shift(T: float, delta_polarizability_au: float) -> float:
    """Differential BBR shift -(1/2) d_alpha <E^2>_T in Hz (d_alpha in atomic units)."""
    if not T > 0:
        raise SystematicsError("temperature must be positive")
    e2 = BBR_FIELD_300K**2 * (T / 300.0) ** 4
    return -0.5 * delta_polarizability_au * AU_POLARIZABILITY * e2 / h


# --- budget -----------------------------------------------------------------


@dataclass(frozen=True)
class ShiftEntry:
    """One budget line.  String values are kept as exact decimals."""

    name: str
    shift: float | Decimal
    sigma: float | Decimal
    upper_bound: bool = False
    mode: str = "declared"

    def __post_init__(self):
        for key in ("shift", "sigma"):
            v = getattr(self, key)
            if isinstance(v, str):
                object.__setattr__(self, key, Decimal(v))
        if not self.sigma >= 0:
            raise SystematicsError(f"{self.name}: sigma must be non-negative")


@dataclass(frozen=True)
class ShiftBudget:
    entries: tuple[ShiftEntry, ...]
    measured: float
    measured_sigma: float
    total_shift: float
    total_sigma: float
    corrected: float
    total_shift_exact: Decimal = Decimal(0)
    corrected_exact: Decimal = Decimal(0)

    def as_dict(self) -> dict:
        return {
            "entries": [
                {"name": en.name, "mode": en.mode, "shift_Hz": float(en.shift), "sigma_Hz": float(en.sigma),
                 "upper_bound": en.upper_bound}
                for en in self.entries
            ],
            "total_shift_Hz": self.total_shift,
            "total_sigma_Hz": self.total_sigma,
            "measured_Hz": self.measured,
            "statistical_sigma_Hz": self.measured_sigma,
            "systematic_sigma_Hz": self.total_sigma,
            "corrected_Hz": self.corrected,
            "total_shift_exact_Hz": str(self.total_shift_exact),
            "corrected_exact_Hz": str(self.corrected_exact),
        }

    def table(self) -> str:
        w = max([len("Effect"), len("Total")] + [len(en.name) for en in self.entries])
        lines = [f"{'Effect':<{w}}  {'Shift (Hz)':>12}  {'Error (Hz)':>10}"]
        for en in self.entries:
            err = ("<" if en.upper_bound else "") + f"{float(en.sigma):g}"
            lines.append(f"{en.name:<{w}}  {float(en.shift):>12g}  {err:>10}")
        lines.append(f"{'Total':<{w}}  {self.total_shift:>12.1f}  {self.total_sigma:>10.0f}")
        lines.append(f"{'Measured':<{w}}  {self.measured:>12.0f}  {self.measured_sigma:>10g}")
        lines.append(f"{'Corrected':<{w}}  {self.corrected:>12.0f}")
        return "\n".join(lines)


def to_decimal(x) -> Decimal:
    if isinstance(x, Decimal):
        return x
    if isinstance(x, str):
        return Decimal(x)
    return Decimal(repr(float(x)))


def build_budget(entries: Iterable[ShiftEntry], measured: float | str, measured_sigma: float | str = 0.0) -> ShiftBudget:
    """Sum shifts, add errors in quadrature and correct the measured value.

    Shift sums and the correction use decimal arithmetic so that Hz digits of a
    THz-scale measurement are not rounded.
    """
    entries = tuple(entries)
    names = [en.name for en in entries]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise SystematicsError(f"duplicate budget entries: {', '.join(sorted(dup))}")
    total = sum((to_decimal(en.shift) for en in entries), Decimal(0))
    var = sum((to_decimal(en.sigma) ** 2 for en in entries), Decimal(0))
    corrected = to_decimal(measured) - total
    return ShiftBudget(entries, float(to_decimal(measured)), float(to_decimal(measured_sigma)), float(total),
                       float(var.sqrt()), float(corrected), total, corrected)


def reference_entry(name: str, fractional: float, frequency_hz: float) -> ShiftEntry:
    """Reference-clock entry: zero shift, fractional inaccuracy times the frequency."""
    return ShiftEntry(name, 0.0, abs(fractional) * frequency_hz, mode="computed")
