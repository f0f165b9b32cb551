"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""
import math
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import replace
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

from combraman import raman as R
from combraman.atomic import clebsch_gordan_coupling, linear_polarization
from combraman.comb import SpectralPhase, enumerate_teeth, fit_spectral_phase, spectral_phase_at
from combraman.config import bundled_config_path, load_config
from combraman.dynamics import (
    DetuningDistribution,
    averaged_trace,
    damped_rabi_values,
    lineshape_values,
    rabi_probability,
    sample_shots,
)
from combraman.inference import (
    DataSeries,
    binomial_sigma,
    fit_averaged_rabi,
    fit_damped_rabi,
    fit_line,
    fit_sinc2,
)
from combraman.pipeline import SynthSettings, generate_dataset, run_pipeline
from combraman.systematics import (
    build_budget,
    second_order_zeeman,
    second_order_zeeman_perturbative,
    to_decimal,
)

TWO_PI = 2 * math.pi
FIBER = bundled_config_path("fiber_comb.cfg")
MIRA = bundled_config_path("mira_comb.cfg")


def _fiber(m_i, m_f=None):
    m_f = m_i if m_f is None else m_f
    return load_config(FIBER, {"transition.m_initial": str(m_i), "transition.m_final": str(m_f)})


TRANSITIONS = [("3/2", "-3/2"), ("1/2", "-1/2")]


# 1 ---------------------------------------------------------------------------


def test_c01_magic_polarization(acceptance):
    targets = {"3/2": (59.0, 2.0), "1/2": (79.0, 5.0)}
    found, ok = [], True
    for pair in TRANSITIONS:
        target, tol = targets[pair[0]]
        for m in pair:
            cfg = _fiber(m)
            mp = R.find_magic_polarization(cfg.comb(), cfg.levels(), cfg.transition(), **cfg.stark_options())
            good = mp.found and abs(mp.theta_deg - target) <= tol
            ok &= good
            found.append(f"{m}: {mp.theta_deg:.2f} deg (target {target:g}+-{tol:g})" if mp.found else f"{m}: none")
    assert acceptance(1, ok, "; ".join(found))


# 2 ---------------------------------------------------------------------------


def test_c02_rabi_zero(acceptance):
    thetas = np.radians(np.linspace(0, 90, 181))
    out, ok = [], True
    for pair in TRANSITIONS:
        for m in pair:
            cfg = _fiber(m)
            scan = R.theta_scan(cfg.comb(), cfg.levels(), cfg.transition(), thetas, cfg.magnetic_field())
            zc = [math.degrees(z) for z in scan.zero_crossings()]
            good = len(zc) >= 1 and all(abs(z - 55.0) <= 2.0 for z in zc)
            ok &= good
            out.append(f"{m}: " + ",".join(f"{z:.2f}" for z in zc))
    assert acceptance(2, ok, "zero crossings (deg) " + "; ".join(out) + " (target 55+-2)")


# 3 ---------------------------------------------------------------------------


def test_c03_bandwidth_ratio(acceptance):
    cfg = load_config(FIBER)
    b, c = cfg.section("bandwidth"), cfg.section("comb")
    scan = R.bandwidth_scan(cfg.levels(), cfg.transition(), [1.0, 8.0], b["intensity_W_per_mm2"] * 1e6,
                            TWO_PI * b["mean_detuning_Hz"], TWO_PI * c["rep_rate_Hz"], cfg.polarization(),
                            cfg.magnetic_field(), b["truncation"], b["constant_detuning"], c["beam_waist_m"])
    r1, r8 = scan.rabi_ratio
    ok = abs(r1 - 1.0) <= 0.05 and 1.90 <= r8 <= 2.00
    assert acceptance(3, ok, f"ratio {r1:.4f} at w0 (1.00+-0.05), {r8:.4f} at 8 w0 ([1.90, 2.00])")


# 4, 5 -----------------------------------------------------------------------


def _mira(D2, intensity=None):
    over = {"comb.D2_fs2": str(D2)}
    if intensity is not None:
        over["comb.peak_intensity_W_per_mm2"] = str(intensity)
    cfg = load_config(MIRA, over)
    return R.raman_rabi(cfg.comb(), cfg.levels(), cfg.transition(), cfg.polarization(), cfg.magnetic_field(),
                        cfg.get("comb", "efficiency")), cfg


def test_c04_gdd_efficiency(acceptance):
    chirped, cfg = _mira(2600)
    flat, _ = _mira(0)
    q_rep = cfg.transition().q * cfg.comb().rep_rate / TWO_PI
    ok_chirp = abs(chirped.eta_eff - 0.72) <= 0.05
    ok_flat = flat.eta_eff == 1.0
    detail = (f"eta_eff(D2=2600 fs^2) = {chirped.eta_eff:.4f} (target 0.72+-0.05), "
              f"eta_eff(D2=0) = {flat.eta_eff!r} (target 1 exactly), q w_r = 2pi x {q_rep / 1e12:.4f} THz; "
              "residual-phase case not run (no measured table supplied)")
    assert acceptance(4, ok_chirp and ok_flat, detail)


def test_c05_cross_intensity(acceptance):
    a, _ = _mira(2600, 47)
    b, _ = _mira(0, 38)
    ratio = a.omega_R / b.omega_R
    ok = abs(ratio - 1.0) <= 0.10
    assert acceptance(5, ok, f"Omega_R(47 W/mm2, 2600 fs2) / Omega_R(38 W/mm2, 0) = {ratio:.4f} (1.00+-0.10); "
                             f"{a.omega_R_hz / 1e3:.2f} kHz vs {b.omega_R_hz / 1e3:.2f} kHz")


# 6 ---------------------------------------------------------------------------


def test_c06_second_order_zeeman(acceptance):
    cfg = load_config(FIBER)
    B = cfg.magnetic_field()
    z = second_order_zeeman(cfg.levels(), B, 0.5)
    pert = second_order_zeeman_perturbative(cfg.levels(), B, 0.5)
    rel = abs(z.shift_hz - pert) / pert
    ok = abs(z.shift_hz - 21.94) <= 0.5 and rel <= 0.01
    assert acceptance(6, ok, f"diagonalisation {z.shift_hz:.4f} Hz (21.94+-0.5), perturbative {pert:.4f} Hz, "
                             f"relative difference {rel:.2%} (<= 1%)")


# 7 ---------------------------------------------------------------------------


def test_c07_budget_reproduction(acceptance):
    cfg = load_config(bundled_config_path("table1_budget.cfg"))
    b = cfg.section("budget")
    budget = build_budget(cfg.budget_entries(), b["measured_Hz"], b["measured_sigma_Hz"])
    total = budget.total_shift_exact.quantize(Decimal("0.1"))
    sigma = round(budget.total_sigma)
    corrected = budget.corrected_exact.quantize(Decimal("1"))
    exact_ok = budget.corrected_exact == to_decimal(b["measured_Hz"]) - budget.total_shift_exact
    ok = total == Decimal("20.9") and sigma == 9 and corrected == Decimal("1819599021534") and exact_ok
    assert acceptance(7, ok, f"total {budget.total_shift_exact} -> {total} Hz (20.9), sigma "
                             f"{budget.total_sigma:.4f} -> {sigma} Hz (9), corrected {budget.corrected_exact} "
                             f"-> {corrected} Hz (1819599021534)")


# 8 ---------------------------------------------------------------------------


def _rel(a, b, floor=0.0):
    return abs(a - b) / max(abs(b), floor)


def _roundtrip_sinc2(rng):
    T = 1e-3
    c, area, amp = rng.uniform(-300, 300), rng.uniform(0.6, 1.4), rng.uniform(0.5, 1.0)
    x = np.linspace(-4000, 4000, 30)
    om = area * math.pi / T
    f = fit_sinc2(DataSeries(x, lineshape_values(om, T, TWO_PI * x, amp, TWO_PI * c)), T)
    return max(_rel(f["center_Hz"], c, 1.0), _rel(f["omega"], om), _rel(f["amplitude"], amp))


def _roundtrip_damped(rng):
    C, tau, om = rng.uniform(0.5, 1.0), rng.uniform(50e-6, 500e-6), TWO_PI * rng.uniform(10e3, 50e3)
    t = np.linspace(0, 300e-6, 151)
    f = fit_damped_rabi(DataSeries(t, damped_rabi_values(C, tau, om, t)))
    return max(_rel(f["C"], C), _rel(f["tau"], tau), _rel(f["omega"], om))


def _roundtrip_averaged(rng):
    eta, fw = rng.uniform(0.6, 1.0), rng.uniform(5e3, 60e3)
    unit = TWO_PI * 40e3
    t = np.linspace(0, 150e-6, 76)
    y = averaged_trace(eta * unit, DetuningDistribution.gaussian(fw), t, nodes=256, tol=1e-12,
                       max_nodes=4096).populations
    f = fit_averaged_rabi(DataSeries(t, y), unit, tol=1e-9, max_nodes=4096)
    return max(_rel(f["eta_eff"], eta), _rel(f["linewidth_Hz"], fw))


def _roundtrip_phase(rng):
    wc = TWO_PI * 380e12
    truth = SpectralPhase(rng.uniform(-3, 3), rng.uniform(-5e-13, 5e-13), rng.uniform(-5e-27, 5e-27), wc)
    w = wc + np.linspace(-TWO_PI * 5e12, TWO_PI * 5e12, 41)
    f, _ = fit_spectral_phase(w, spectral_phase_at(truth, w), omega_c=wc)
    s = TWO_PI * 5e12
    return max(_rel(f.phi0, truth.phi0), _rel(f.tau_g, truth.tau_g), _rel(f.D2, truth.D2))


def _roundtrip_line(rng):
    b0, slope = rng.uniform(-1e3, 1e3), rng.uniform(-1e-2, 1e-2)
    x = -20e3 * np.arange(1, 6)
    f = fit_line(DataSeries(x, b0 + slope * x, rng.uniform(0.5, 5, 5)))
    return max(_rel(f["intercept"], b0), _rel(f["slope"], slope))


def test_c08_fit_roundtrips(acceptance):
    rng = np.random.default_rng(20190801)
    draws = 100
    worst = {}
    for name, fn in [("sinc2", _roundtrip_sinc2), ("damped-Rabi", _roundtrip_damped),
                     ("averaged-Rabi", _roundtrip_averaged), ("spectral-phase", _roundtrip_phase),
                     ("weighted-linear", _roundtrip_line)]:
        worst[name] = max(fn(rng) for _ in range(draws))
    ok = all(v <= 1e-6 for v in worst.values())
    assert acceptance(8, ok, f"{draws} draws each, worst relative error " +
                      ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-6)")


# 9 ---------------------------------------------------------------------------


def test_c09_noise_realism(acceptance):
    d = load_config(FIBER).section("dynamics")
    T, span, shots, points = d["pulse_s"], d["span_Hz"], d["shots"], 30
    om = math.pi / T
    x = np.linspace(-span, span, points)
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    centres, errors = [], []
    for seed in range(200):
        c = rng.uniform(-0.5, 0.5) * (x[1] - x[0])
        s = sample_shots(np.clip(lineshape_values(om, T, TWO_PI * (x - c)), 0, 1), shots, seed)
        f = fit_sinc2(DataSeries(x, s.fractions, binomial_sigma(s.counts, shots)), T, shots=shots)
        centres.append(f["center_Hz"] - c)
        errors.append(f.error("center_Hz"))
    elapsed = time.perf_counter() - t0
    emp, rep = float(np.std(centres, ddof=1)), float(np.mean(errors))
    ok = 5 <= emp <= 30 and 5 <= rep <= 30 and elapsed < 120
    assert acceptance(9, ok, f"pi pulse {T * 1e3:g} ms, {points} points over +-{span:g} Hz, {shots} shots, 200 seeds: "
                             f"scatter {emp:.2f} Hz, mean reported {rep:.2f} Hz ([5, 30]), {elapsed:.1f} s")


# 10 --------------------------------------------------------------------------


def test_c10_closed_loop_pipeline(acceptance):
    cfg = load_config(bundled_config_path("synthetic_pipeline.cfg"))
    s = cfg.section("synth")
    settings = SynthSettings(Decimal(s["nu_D_Hz"]), s["sessions"], s["ac729_Hz"], s["stark_slope"],
                             s["session_offset_sigma_Hz"], s["reference_error_Hz"], s["points"], s["shots"],
                             s["span_Hz"], s["pulse_s"], s["contrast"])
    entries = cfg.budget_entries()
    shift = sum((to_decimal(e.shift) for e in entries), Decimal(0))
    within_u, within_1 = 0, 0
    for seed in range(50):
        with tempfile.TemporaryDirectory() as tmp:
            index = generate_dataset(tmp, settings, cfg.levels(), cfg.magnetic_field(), shift, 1000 + seed)
            final = run_pipeline(index, entries)["final"]
        err = abs(float(Decimal(final["corrected_Hz"]) - settings.nu_D))
        within_u += err <= final["expanded_uncertainty_Hz"]
        within_1 += err <= final["combined_sigma_Hz"]
    ok = within_u >= 45
    assert acceptance(10, ok, f"{within_u}/50 runs within the reported expanded uncertainty (k = 2, >= 45 needed); "
                              f"{within_1}/50 within one combined standard uncertainty")


# 11 --------------------------------------------------------------------------

_THREAD_PROBE = """
from combraman.config import bundled_config_path, load_config
from combraman import raman as R
cfg = load_config(bundled_config_path("fiber_comb.cfg"))
args = (cfg.comb(), cfg.levels(), cfg.transition(), cfg.polarization(30))
r = R.raman_rabi(*args, cfg.magnetic_field(), workers={workers})
s = R.ac_stark_shift(cfg.comb(), cfg.levels(), cfg.transition().initial, cfg.polarization(30),
                     workers={workers}, **cfg.stark_options())
print(repr(r.complex_sum), repr(s.shift_hz))
"""


def _probe(threads, backend, workers):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads), COMBRAMAN_BACKEND=backend, PYTHONWARNINGS="ignore")
    out = subprocess.run([sys.executable, "-c", _THREAD_PROBE.format(workers=workers)], env=env,
                         capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_c11_invariances(acceptance):
    cfg = load_config(FIBER)
    lv, tr, B, comb = cfg.levels(), cfg.transition(), cfg.magnetic_field(), cfg.comb()
    pol = cfg.polarization(30)
    checks = {}

    ref = R.raman_rabi(comb, lv, tr, pol, B).omega_R
    dev = 0.0
    for phi0, tau in [(1.3, 0.0), (0.0, 2.5e-12), (-2.0, -4e-13)]:
        c2 = replace(comb, phase=replace(comb.phase, phi0=phi0, tau_g=tau))
        dev = max(dev, abs(R.raman_rabi(c2, lv, tr, pol, B).omega_R / ref - 1))
    checks["phase/group-delay invariance"] = (dev, 1e-9)

    big = comb.with_intensity(3 * comb.peak_intensity)
    opts = cfg.stark_options()
    s1 = R.differential_ac_stark(comb, lv, tr, pol, **opts)
    s3 = R.differential_ac_stark(big, lv, tr, pol, **opts)
    lin = max(abs(R.raman_rabi(big, lv, tr, pol, B).omega_R / ref - 3) / 3, abs(s3 / s1 - 3) / 3)
    checks["power linearity"] = (lin, 1e-12)

    inter = R._intermediates(lv, tr)
    w0 = TWO_PI * R.transition_frequency_hz(tr, B)
    cw = 0.0
    for det in TWO_PI * np.array([1e12, 7e12, 30e12]):
        w_hi = inter[0][0].energy - tr.lower.fine.energy + det
        teeth = R.two_tooth_set(w_hi, tr.q, w0 / tr.q, 2e6)
        a = R.raman_rabi(None, lv, tr, pol, B, teeth=teeth).omega_R
        cw = max(cw, abs(a / R.cw_rabi(lv, tr, pol, 4e6, det) - 1))
    checks["two-tooth CW reduction"] = (cw, 1e-12)

    cg = 0.0
    for lower, upper in [("D5/2", "P3/2"), ("D3/2", "P3/2"), ("D3/2", "P1/2")]:
        for m in lv[lower].sublevels:
            tot = sum(clebsch_gordan_coupling(lv.zeeman(lower, m), lv.zeeman(upper, mu), q) ** 2
                      for mu in lv[upper].sublevels for q in (-1, 0, 1))
            cg = max(cg, abs(tot - 1))
    checks["CG completeness"] = (cg, 1e-12)

    rng = np.random.default_rng(11)
    p = rabi_probability(rng.uniform(0, 1e6, 10**5), rng.uniform(-1e7, 1e7, 10**5), rng.uniform(0, 1e-2, 10**5))
    dist = DetuningDistribution.gaussian(43e3)
    pa = averaged_trace(TWO_PI * 35e3, dist, np.linspace(0, 2e-4, 201)).populations
    outside = int(np.sum((p < 0) | (p > 1)) + np.sum((pa < 0) | (pa > 1)))
    checks["population bounds"] = (outside, 0)

    t = np.linspace(0, 2e-4, 41)
    a = averaged_trace(TWO_PI * 35e3, dist, t).populations
    b = averaged_trace(TWO_PI * 35e3, dist, t, nodes=2048, tol=1.0, max_nodes=8192).populations
    checks["quadrature convergence"] = (float(np.max(np.abs(a - b))), 1e-6)

    probes = {(th, be, wk): _probe(th, be, wk) for th, be, wk in
              [(1, "numba", 1), (2, "numba", 1), (4, "numba", 1), (1, "numpy", 1), (1, "numpy", 3)]}
    checks["bit-identical across threads/backends"] = (len(set(probes.values())) - 1, 0)

    ok = all(v <= tol for v, tol in checks.values())
    assert acceptance(11, ok, "; ".join(f"{k} {v:.1e} (<= {tol:g})" if isinstance(v, float) else f"{k} {v} (== 0)"
                                       for k, (v, tol) in checks.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-rN"]))
