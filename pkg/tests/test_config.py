import math

import pytest

from combraman.config import ConfigError, bundled_config_path, load_config, parse_config

LEVELS = bundled_config_path("fiber_comb.cfg").read_text().split("[manifold S1/2]", 1)[1]
LEVELS = "[manifold S1/2]" + LEVELS


def _cfg(extra, overrides=None):
    return parse_config(extra + "\n" + LEVELS, overrides=overrides)


@pytest.mark.parametrize("name", ["fiber_comb.cfg", "mira_comb.cfg", "table1_budget.cfg", "synthetic_pipeline.cfg"])
def test_bundled_configs_load(name):
    cfg = load_config(bundled_config_path(name))
    assert len(cfg.sha256) == 64
    if cfg.manifolds:
        assert cfg.levels()["D5/2"].J == 2.5


def test_fiber_comb_is_resonant(fiber_cfg):
    comb, tr = fiber_cfg.comb(), fiber_cfg.transition()
    from combraman.raman import transition_frequency_hz
    assert tr.q * comb.rep_rate == pytest.approx(2 * math.pi * transition_frequency_hz(tr, fiber_cfg.magnetic_field()))


def test_mira_intensity(mira_cfg):
    assert mira_cfg.peak_intensity() == pytest.approx(47e6)


def test_overrides_and_seed(fiber_cfg):
    cfg = load_config(bundled_config_path("fiber_comb.cfg"), {"polarization.theta_deg": "45", "run.seed": "9"})
    assert cfg.polarization().theta == pytest.approx(math.pi / 4)
    assert cfg.seed == 9 and fiber_cfg.seed != 9


@pytest.mark.parametrize("text,msg", [
    ("[comb]\nrep_rate_Hz = 1e8\nbogus = 1\n", "unknown key"),
    ("[nosuch]\na = 1\n", "unknown section"),
    ("[comb]\nspectrum = sawtooth\nrep_rate_Hz = 1e8\n", "sawtooth"),
    ("[field]\nB_G = abc\n", "B_G"),
    ("[transition]\nm_initial = 0.3\n", "half-integer"),
])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        _cfg(text)


def test_missing_required_key():
    with pytest.raises(ConfigError, match="rep_rate_Hz"):
        _cfg("[comb]\ncenter_Hz = 3.8e14\n")


def test_bad_override_target():
    with pytest.raises(ConfigError):
        _cfg("", overrides={"comb": "1"})


def test_two_tooth_teeth():
    cfg = _cfg("[comb]\nrep_rate_Hz = 250e6\nspectrum = two_tooth\ntwo_tooth_detuning_Hz = 1e12\n"
               "peak_intensity_W_per_mm2 = 10\n[field]\nB_G = 6.5\n[transition]\nm_initial = 1/2\nm_final = 1/2\n")
    teeth = cfg.teeth()
    assert len(teeth) == 2
    assert teeth.total_intensity == pytest.approx(10e6)
    with pytest.raises(ConfigError):
        cfg.comb()


def test_budget_entries_need_kind():
    with pytest.raises(ConfigError, match="kind"):
        _cfg("[entry X]\nmode = computed\n").budget_entries()
