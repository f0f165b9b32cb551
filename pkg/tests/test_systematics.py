import math
from decimal import Decimal

import numpy as np
import pytest
from scipy.constants import atomic_mass, e, h

from combraman.atomic import MU_B, MagneticField
from combraman.systematics import (
    A0,
    AU_POLARIZABILITY,
    G_S,
    ShiftEntry,
    SystematicsError,
    TrapConfig,
    bbr_shift,
    build_budget,
    d_manifold_hamiltonian,
    differential_quadrupole,
    geometric_angle_factor,
    quadrupole_bracket,
    quadrupole_shift,
    reference_entry,
    second_order_zeeman,
    second_order_zeeman_perturbative,
    second_order_zeeman_value,
)

TWO_PI = 2 * math.pi


def test_g_s_value():
    assert G_S == pytest.approx(2.00231930436, rel=1e-10)


def test_hamiltonian_is_hermitian_and_sized(levels):
    basis, H, offset = d_manifold_hamiltonian(levels, 6.5e-4)
    assert H.shape == (10, 10) and len(basis) == 10
    assert np.allclose(H, H.conj().T)


def test_zero_field_has_no_quadratic_shift(levels):
    assert second_order_zeeman_value(levels, 0.0, 0.5) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("mj", [0.5, 1.5, -0.5, -1.5])
def test_diagonalisation_agrees_with_perturbation(levels, mj):
    B = MagneticField.from_gauss(6.5)
    exact = second_order_zeeman(levels, B, mj, g_s=2.0).shift_hz
    pert = second_order_zeeman_perturbative(levels, B, mj)
    assert exact == pytest.approx(pert, rel=1e-4)


def test_perturbative_closed_form(levels):
    """<5/2 1/2|S_z|3/2 1/2> = -sqrt(6)/5 for L = 2, S = 1/2."""
    B = MagneticField.from_gauss(6.5)
    nu = levels.fine_structure_gap_hz()
    expected = 2 * (math.sqrt(6) / 5 * MU_B * B.magnitude / h) ** 2 / nu
    assert second_order_zeeman_perturbative(levels, B, 0.5) == pytest.approx(expected, rel=1e-12)


def test_quadratic_scaling(levels):
    a = second_order_zeeman_value(levels, 2e-4, 0.5)
    b = second_order_zeeman_value(levels, 20e-4, 0.5)
    assert b / a == pytest.approx(100.0, rel=1e-3)


def test_field_uncertainty_propagates(levels):
    z = second_order_zeeman(levels, MagneticField.from_gauss(6.5, 0.003), 0.5)
    assert z.sigma_field_hz == pytest.approx(2 * z.shift_hz * 0.003 / 6.5, rel=1e-3)
    assert z.sigma_model_hz > 0


def test_mj_must_exist_in_both(levels):
    with pytest.raises(SystematicsError):
        second_order_zeeman_value(levels, 1e-4, 2.5)


def test_quadrupole_bracket():
    assert quadrupole_bracket(2.5, 0.5) == pytest.approx((8.75 - 0.75) / 10)
    assert quadrupole_bracket(1.5, 1.5) == pytest.approx(-1.0)
    assert quadrupole_bracket(0.5, 0.5) == 0.0
    # traceless over sublevels
    assert sum(quadrupole_bracket(2.5, m / 2) for m in range(-5, 6, 2)) == pytest.approx(0.0, abs=1e-12)


def test_quadrupole_shift_formula(levels):
    trap = TrapConfig(TWO_PI * 1e6, TWO_PI * 3e6, 40 * atomic_mass, e, {"D5/2": 1.83, "D3/2": 1.3})
    grad = 40 * atomic_mass * (TWO_PI * 1e6) ** 2 / e
    st = levels.zeeman("D5/2", 0.5)
    expected = 0.5 * 1.83 * e * A0**2 * grad * 0.8 / h
    assert quadrupole_shift(trap, st) == pytest.approx(expected, rel=1e-12)
    d = differential_quadrupole(trap, st, levels.zeeman("D3/2", 0.5))
    assert d == pytest.approx(expected - 0.5 * 1.3 * e * A0**2 * grad * 1.0 / h, rel=1e-12)
    with pytest.raises(SystematicsError):
        quadrupole_shift(TrapConfig(1.0, 1.0), st)


def test_geometric_angle_factor():
    assert geometric_angle_factor(0.0) == pytest.approx(1.0)
    assert geometric_angle_factor(math.pi / 2) == pytest.approx(-0.5)
    assert geometric_angle_factor(math.acos(1 / math.sqrt(3))) == pytest.approx(0.0, abs=1e-15)


def test_bbr_scaling_and_sign():
    a = bbr_shift(300.0, -0.232)
    assert a == pytest.approx(0.5 * 0.232 * AU_POLARIZABILITY * 831.9**2 / h)
    assert a > 0
    assert bbr_shift(600.0, -0.232) == pytest.approx(16 * a)
    with pytest.raises(SystematicsError):
        bbr_shift(0.0, 1.0)


def test_budget_exact_decimal():
    entries = [ShiftEntry("a", "0.1", "3"), ShiftEntry("b", "0.2", "4")]
    b = build_budget(entries, "1819599021555", "8")
    assert b.total_shift_exact == Decimal("0.3")
    assert b.corrected_exact == Decimal("1819599021554.7")
    assert b.total_sigma == pytest.approx(5.0)
    assert "Corrected" in b.table()


def test_budget_rejects_duplicates_and_negative_sigma():
    with pytest.raises(SystematicsError):
        build_budget([ShiftEntry("a", 0, 1), ShiftEntry("a", 0, 1)], 0)
    with pytest.raises(SystematicsError):
        ShiftEntry("x", 0, -1)


def test_reference_entry():
    en = reference_entry("clock", 5e-12, 1.8196e12)
    assert en.shift == 0.0 and en.sigma == pytest.approx(9.098)
