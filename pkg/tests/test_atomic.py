import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sympy import Rational
from sympy.physics.wigner import clebsch_gordan as sym_cg, wigner_3j as sym_3j

from combraman.atomic import (
    GAUSS,
    MagneticField,
    LevelSchemeError,
    build_level_scheme,
    clebsch_gordan,
    clebsch_gordan_coupling,
    einstein_A_from_element,
    half,
    lande_ls,
    linear_polarization,
    linear_zeeman_shift,
    one_photon_rabi,
    reduced_element_from_A,
    wigner_3j,
)

JS = [Fraction(k, 2) for k in range(0, 6)]


def _ms(j):
    return [-j + k for k in range(int(2 * j) + 1)]


def _R(f):
    return Rational(f.numerator, f.denominator)


def test_half_rejects_non_half_integers():
    assert half(1.5) == Fraction(3, 2)
    with pytest.raises(ValueError):
        half(0.3)


@pytest.mark.parametrize("j1", JS[1:4])
@pytest.mark.parametrize("j2", [Fraction(1), Fraction(1, 2)])
def test_clebsch_gordan_matches_sympy(j1, j2):
    for J in [abs(j1 - j2) + k for k in range(int(2 * min(j1, j2)) + 1)]:
        for m1 in _ms(j1):
            for m2 in _ms(j2):
                M = m1 + m2
                if abs(M) > J:
                    continue
                ref = float(sym_cg(_R(j1), _R(j2), _R(J), _R(m1), _R(m2), _R(M)))
                assert clebsch_gordan(j1, m1, j2, m2, J, M) == pytest.approx(ref, abs=1e-14)


def test_wigner_3j_matches_sympy():
    for j1, j2, j3 in [(Fraction(5, 2), 1, Fraction(3, 2)), (Fraction(3, 2), 1, Fraction(1, 2)), (2, 1, 1)]:
        for m1 in _ms(Fraction(j1)):
            for m2 in _ms(Fraction(j2)):
                m3 = -m1 - m2
                if abs(m3) > j3:
                    continue
                ref = float(sym_3j(_R(Fraction(j1)), _R(Fraction(j2)), _R(Fraction(j3)), _R(m1), _R(m2), _R(m3)))
                assert wigner_3j(j1, j2, j3, m1, m2, m3) == pytest.approx(ref, abs=1e-14)


def test_selection_rules_give_zero():
    assert clebsch_gordan(1, 1, 1, 1, 1, 1) == 0.0  # M mismatch
    assert clebsch_gordan(Fraction(1, 2), Fraction(1, 2), 1, 0, 3, Fraction(1, 2)) == 0.0  # triangle


@pytest.mark.parametrize("lower,upper", [("D5/2", "P3/2"), ("D3/2", "P3/2"), ("D3/2", "P1/2"), ("S1/2", "P1/2")])
def test_coupling_completeness(levels, lower, upper):
    """Angular factors squared sum to one over upper sublevels and components."""
    for m in levels[lower].sublevels:
        lo = levels.zeeman(lower, m)
        total = sum(
            clebsch_gordan_coupling(lo, levels.zeeman(upper, mu), q) ** 2
            for mu in levels[upper].sublevels
            for q in (-1, 0, 1)
        )
        assert abs(total - 1.0) < 1e-12


def test_lande_factors():
    assert lande_ls(0, Fraction(1, 2), Fraction(1, 2)) == pytest.approx(2.0)
    assert lande_ls(2, Fraction(1, 2), Fraction(5, 2)) == pytest.approx(1.2)
    assert lande_ls(2, Fraction(1, 2), Fraction(3, 2)) == pytest.approx(0.8)
    assert lande_ls(1, Fraction(1, 2), Fraction(1, 2)) == pytest.approx(2 / 3)


def test_linear_zeeman_shift_scale(levels):
    B = MagneticField.from_gauss(1.0)
    # mu_B / h = 1.39962449 MHz/G
    assert linear_zeeman_shift(levels.zeeman("S1/2", 0.5), B) == pytest.approx(1.39962449e6, rel=1e-8)


@given(st.floats(0, 2 * math.pi), st.booleans())
def test_polarization_normalised(theta, perp):
    e = linear_polarization(theta, perp)
    assert sum(abs(x) ** 2 for x in e.spherical) == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=100)
@given(st.floats(1e5, 1e9), st.floats(1e14, 5e15))
def test_einstein_A_roundtrip(A, omega):
    d = reduced_element_from_A(A, omega, Fraction(3, 2), Fraction(5, 2))
    assert einstein_A_from_element(d, omega, Fraction(3, 2), Fraction(5, 2)) == pytest.approx(A, rel=1e-12)


def test_one_photon_rabi_linear_in_field(levels):
    lk = levels.link("P3/2", "D5/2")
    lo, up = levels.zeeman("D5/2", 0.5), levels.zeeman("P3/2", 0.5)
    pol = linear_polarization(0.0)
    a = one_photon_rabi(1.0, lk, lo, up, pol)
    assert one_photon_rabi(7.0, lk, lo, up, pol) == pytest.approx(7 * a, rel=1e-15)
    assert abs(a) > 0
    with pytest.raises(LevelSchemeError):
        one_photon_rabi(1.0, levels.link("P1/2", "D3/2"), lo, up, pol)


BASE = [
    dict(label="S1/2", L=0, S=0.5, J=0.5, energy_Hz=0.0, ls=True),
    dict(label="P1/2", L=1, S=0.5, J=0.5, energy_Hz=7.55e14, ls=True),
    dict(label="P3/2", L=1, S=0.5, J=1.5, energy_Hz=7.62e14, ls=True),
    dict(label="D3/2", L=2, S=0.5, J=1.5, energy_Hz=4.09e14, ls=True),
    dict(label="D5/2", L=2, S=0.5, J=2.5, energy_Hz=4.11e14, ls=True),
]
LINKS = [
    dict(upper="P3/2", lower="D5/2", A_per_s=9.9e6),
    dict(upper="P3/2", lower="D3/2", A_per_s=1.1e6),
    dict(upper="P1/2", lower="D3/2", A_per_s=1.06e7),
]


def test_build_level_scheme_valid():
    lv = build_level_scheme(BASE, LINKS)
    assert lv["D5/2"].lande_g == pytest.approx(1.2)
    assert lv.link("D5/2", "P3/2") is lv.link("P3/2", "D5/2")


@pytest.mark.parametrize("mutate,msg", [
    (lambda m, l: m.pop(0), "missing manifolds"),
    (lambda m, l: l.pop(), "missing dipole links"),
    (lambda m, l: m[4].update(J=3.5), "outside"),
    (lambda m, l: m[3].update(ls=False), "g_factor or ls"),
    (lambda m, l: l.append(dict(upper="D5/2", lower="S1/2", A_per_s=1.0)), "parity|selection"),
    (lambda m, l: l[0].update(A_per_s=-1.0), "positive"),
])
def test_build_level_scheme_rejects(mutate, msg):
    m = [dict(x) for x in BASE]
    l = [dict(x) for x in LINKS]
    mutate(m, l)
    with pytest.raises(LevelSchemeError, match=msg):
        build_level_scheme(m, l)


def test_field_units():
    assert MagneticField.from_gauss(6.5).magnitude == pytest.approx(6.5 * GAUSS)
    with pytest.raises(ValueError):
        MagneticField(-1.0)
