import csv
from decimal import Decimal

import pytest

from combraman.config import bundled_config_path, load_config
from combraman.pipeline import GroupingError, PipelineError, SynthSettings, generate_dataset, read_index, run_pipeline
from combraman.systematics import ShiftEntry


def _settings(**kw):
    base = dict(nu_D=Decimal("1819599021534"), sessions=2, ac729=(-20e3, -60e3, -100e3), stark_slope=1e-3,
                session_offset_sigma=0.0, reference_error=30.0, points=30, shots=100, span=2000.0, pulse=2e-3)
    base.update(kw)
    return SynthSettings(**base)


@pytest.fixture(scope="module")
def synth_cfg():
    return load_config(bundled_config_path("synthetic_pipeline.cfg"))


def test_generate_and_recover(tmp_path, synth_cfg):
    entries = [ShiftEntry("zeeman", "21.93", "0.02")]
    idx = generate_dataset(tmp_path, _settings(), synth_cfg.levels(), synth_cfg.magnetic_field(), Decimal("21.93"), 4)
    scans = read_index(idx)
    assert len(scans) == 12
    report = run_pipeline(idx, entries)
    err = Decimal(report["final"]["corrected_Hz"]) - Decimal("1819599021534")
    assert abs(float(err)) < 4 * report["final"]["combined_sigma_Hz"]
    assert report["final"]["expanded_uncertainty_Hz"] == pytest.approx(2 * report["final"]["combined_sigma_Hz"])
    assert len(report["sessions"]) == 2
    assert all(abs(s["slope"] - 1e-3) < 5e-4 for s in report["sessions"])


def test_generation_deterministic(tmp_path, synth_cfg):
    a = generate_dataset(tmp_path / "a", _settings(), synth_cfg.levels(), synth_cfg.magnetic_field(), Decimal(0), 3)
    b = generate_dataset(tmp_path / "b", _settings(), synth_cfg.levels(), synth_cfg.magnetic_field(), Decimal(0), 3)
    for p in sorted(a.parent.glob("*.csv")):
        assert p.read_bytes() == (b.parent / p.name).read_bytes()


def test_noise_free_recovery_is_exact(tmp_path, synth_cfg):
    idx = generate_dataset(tmp_path, _settings(shots=10**9), synth_cfg.levels(), synth_cfg.magnetic_field(),
                           Decimal(0), 1)
    report = run_pipeline(idx, [])
    err = Decimal(report["final"]["corrected_Hz"]) - Decimal("1819599021534")
    assert abs(float(err)) < 0.05


def _index(tmp_path, rows):
    p = tmp_path / "index.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("session", "sign", "intensity_tag", "ac729_Hz", "reference_Hz", "pulse_s", "file"))
        w.writerows(rows)
    return p


def test_missing_partner(tmp_path):
    (tmp_path / "a.csv").write_text("delta_Hz,p\n0,1\n")
    p = _index(tmp_path, [("S0", "+", "I0", "-2e4", "1", "2e-3", "a.csv")])
    with pytest.raises(GroupingError, match="partner"):
        run_pipeline(p, [])


def test_duplicate_scan(tmp_path):
    p = _index(tmp_path, [("S0", "+", "I0", "-2e4", "1", "2e-3", "a.csv")] * 2)
    with pytest.raises(GroupingError, match="duplicate"):
        run_pipeline(p, [])


def test_bad_sign_and_columns(tmp_path):
    with pytest.raises(PipelineError, match="sign"):
        read_index(_index(tmp_path, [("S0", "x", "I0", "0", "1", "2e-3", "a.csv")]))
    q = tmp_path / "bad.csv"
    q.write_text("session,sign\nS0,+\n")
    with pytest.raises(PipelineError, match="missing columns"):
        read_index(q)
