"""Run configuration: a strict INI file with typed sections.

Every key is declared in :data:`SCHEMA`.  Unknown sections or keys, missing
required keys and malformed values are all rejected while loading, before any
computation starts.  Frequencies are plain Hz throughout the file.

Repeated sections carry a name after the section type, for example
``[manifold D5/2]``, ``[link P3/2 D5/2]`` and ``[entry Rb standard]``.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .atomic import LevelScheme, MagneticField, PolarizationState, build_level_scheme, linear_polarization
from .comb import (
    CombModel,
    SpectralEnvelope,
    SpectralPhase,
    ToothSet,
    fit_spectral_phase,
    fourier_limited_bandwidth,
    load_phase_samples,
    load_spectrum,
)

TWO_PI = 2 * math.pi
FS = 1e-15
MM2 = 1e-6


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _choice(*options) -> Callable[[str], str]:
    def parse(s):
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v

    return parse


def _halfint(s: str) -> float:
    from fractions import Fraction

    v = Fraction(s.strip())
    if (2 * v).denominator != 1:
        raise ValueError("not a half-integer")
    return v


def _text(s: str) -> str:
    return s.strip()


# key -> (parser, default); a default of REQUIRED makes the key mandatory
REQUIRED = object()

SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {"seed": (int, 0), "description": (_text, "")},
    "manifold": {
        "L": (int, REQUIRED), "S": (_halfint, REQUIRED), "J": (_halfint, REQUIRED),
        "energy_Hz": (float, REQUIRED), "g_factor": (float, None), "ls": (_bool, False),
    },
    "link": {"A_per_s": (float, REQUIRED), "A_sigma_per_s": (float, 0.0)},
    "comb": {
        "rep_rate_Hz": (float, REQUIRED),
        "ceo_Hz": (float, 0.0),
        "spectrum": (_choice("gaussian", "file", "two_tooth"), "gaussian"),
        "center_Hz": (float, None),
        "fwhm_Hz": (float, None),
        "pulse_fwhm_s": (float, None),
        "spectrum_file": (_text, None),
        "avg_power_W": (float, None),
        "peak_intensity_W_per_mm2": (float, None),
        "beam_waist_m": (float, 34e-6),
        "truncation": (float, 1e-6),
        "phi0_rad": (float, 0.0),
        "group_delay_s": (float, 0.0),
        "D2_fs2": (float, 0.0),
        "phase_file": (_text, None),
        "efficiency": (float, 1.0),
        "two_tooth_detuning_Hz": (float, None),
        "tune_rep_rate": (_bool, True),
    },
    "field": {"B_G": (float, REQUIRED), "B_sigma_G": (float, 0.0)},
    "polarization": {"theta_deg": (float, 0.0), "k_perpendicular_to_B": (_bool, True)},
    "transition": {
        "initial": (_text, "D5/2"), "final": (_text, "D3/2"),
        "m_initial": (_halfint, REQUIRED), "m_final": (_halfint, REQUIRED),
    },
    "stark": {
        "counter_rotating": (_bool, True),
        "counter_rotating_sign": (float, 1.0),
        "guard_Hz": (float, 100e9),
    },
    "magic": {"lo_deg": (float, 0.0), "hi_deg": (float, 90.0), "tol_deg": (float, 1e-3),
              "bracket_points": (int, 91)},
    "bandwidth": {
        "ratios": (_floats, (0.2, 0.5, 1.0, 1.3, 2.0, 4.0, 8.0)),
        "mean_detuning_Hz": (float, 100e12),
        "intensity_W_per_mm2": (float, 50.0),
        "constant_detuning": (_bool, True),
        "truncation": (float, 1e-6),
    },
    "dynamics": {
        "rabi_Hz": (float, None),
        "linewidth_Hz": (float, 0.0),
        "center_Hz": (float, 0.0),
        "t_max_s": (float, 1e-3),
        "n_points": (int, 101),
        "nodes": (int, 64),
        "tol": (float, 1e-6),
        "pulse_s": (float, 1e-3),
        "span_Hz": (float, 4000.0),
        "shots": (int, 100),
    },
    "trap": {
        "axial_Hz": (float, REQUIRED), "radial_Hz": (float, REQUIRED),
        "mass_u": (float, 39.962590863), "charge_e": (float, 1.0),
        "quadrupole_D5/2_ea0sq": (float, None), "quadrupole_D3/2_ea0sq": (float, None),
        "angle_factor": (float, 1.0),
    },
    "bbr": {"temperature_K": (float, 300.0), "delta_alpha_au": (float, 0.0)},
    "budget": {
        "measured_Hz": (_text, None),
        "measured_sigma_Hz": (_text, "0"),
        "m_J": (_halfint, 0.5),
    },
    "entry": {
        "mode": (_choice("computed", "declared"), REQUIRED),
        "kind": (_choice("second_order_zeeman", "quadrupole", "bbr", "reference"), None),
        "value_Hz": (_text, "0"),
        "sigma_Hz": (_text, "0"),
        "upper_bound": (_bool, False),
        "fractional": (float, None),
    },
    "synth": {
        "nu_D_Hz": (_text, "1819599021534"),
        "sessions": (int, 4),
        "ac729_Hz": (_floats, (-20e3, -40e3, -60e3, -80e3, -100e3)),
        "stark_slope": (float, 0.0),
        "session_offset_sigma_Hz": (float, 0.0),
        "reference_error_Hz": (float, 30.0),
        "points": (int, 30),
        "shots": (int, 100),
        "span_Hz": (float, 4000.0),
        "pulse_s": (float, 1e-3),
        "contrast": (float, 1.0),
    },
    "pipeline": {"index": (_text, "index.csv")},
}

NAMED = {"manifold", "link", "entry"}


@dataclass
class RunConfig:
    sections: dict[str, dict[str, Any]]
    manifolds: dict[str, dict[str, Any]]
    links: dict[tuple[str, str], dict[str, Any]]
    entries: dict[str, dict[str, Any]]
    source: Path | None = None
    sha256: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    # --- raw access -----------------------------------------------------
    def has(self, section: str) -> bool:
        return section in self.sections

    def section(self, name: str) -> dict[str, Any]:
        if name not in self.sections:
            raise ConfigError(f"configuration has no [{name}] section")
        return self.sections[name]

    def get(self, section: str, key: str):
        return self.section(section)[key]

    @property
    def seed(self) -> int:
        return self.sections.get("run", {}).get("seed", 0)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    # --- builders -------------------------------------------------------
    def levels(self) -> LevelScheme:
        if "levels" not in self._cache:
            mans = [dict(label=k, **{kk: vv for kk, vv in v.items()}) for k, v in self.manifolds.items()]
            for m in mans:
                if m.get("g_factor") is None:
                    m.pop("g_factor", None)
            links = [dict(upper=u, lower=lo, **v) for (u, lo), v in self.links.items()]
            self._cache["levels"] = build_level_scheme(mans, links)
        return self._cache["levels"]

    def magnetic_field(self) -> MagneticField:
        s = self.section("field")
        return MagneticField.from_gauss(s["B_G"], s["B_sigma_G"])

    def polarization(self, theta_deg: float | None = None) -> PolarizationState:
        s = self.sections.get("polarization", SCHEMA_DEFAULTS["polarization"])
        th = s["theta_deg"] if theta_deg is None else theta_deg
        return linear_polarization(math.radians(th), s["k_perpendicular_to_B"])

    def transition(self):
        from .raman import make_transition

        s = self.section("transition")
        c = self.section("comb")
        return make_transition(self.levels(), s["m_initial"], s["m_final"], TWO_PI * c["rep_rate_Hz"],
                               self.magnetic_field(), s["initial"], s["final"])

    def comb(self) -> CombModel:
        """Comb model; with ``tune_rep_rate`` the spacing is set onto resonance."""
        from .raman import tune_comb

        c = self.section("comb")
        if c["spectrum"] == "two_tooth":
            raise ConfigError("a two_tooth comb has no envelope; use teeth()")
        if c["spectrum"] == "gaussian":
            center = _need(c, "center_Hz", "comb")
            if c["fwhm_Hz"] is not None:
                fwhm = c["fwhm_Hz"]
            elif c["pulse_fwhm_s"] is not None:
                fwhm = fourier_limited_bandwidth(c["pulse_fwhm_s"]) / TWO_PI
            else:
                raise ConfigError("[comb] gaussian spectrum needs fwhm_Hz or pulse_fwhm_s")
            env = SpectralEnvelope.gaussian(TWO_PI * center, TWO_PI * fwhm)
        else:
            env = load_spectrum(self.resolve(_need(c, "spectrum_file", "comb")))
        w_c = TWO_PI * c["center_Hz"] if c["center_Hz"] is not None else env.center_of_mass
        if c["phase_file"] is not None:
            w, ph, wt = load_phase_samples(self.resolve(c["phase_file"]))
            phase, _ = fit_spectral_phase(w, ph, wt, omega_c=w_c)
        else:
            phase = SpectralPhase(c["phi0_rad"], c["group_delay_s"], c["D2_fs2"] * FS**2, w_c)
        rep = TWO_PI * c["rep_rate_Hz"]
        model = CombModel(rep, (TWO_PI * c["ceo_Hz"]) % rep, env, phase, 0.0, c["beam_waist_m"], c["truncation"])
        model = model.with_intensity(self.peak_intensity()) if c["avg_power_W"] is None else \
            CombModel(rep, model.ceo, env, phase, c["avg_power_W"], c["beam_waist_m"], c["truncation"])
        if c["tune_rep_rate"] and self.has("transition"):
            model = tune_comb(model, self.transition(), self.magnetic_field())
        return model

    def peak_intensity(self) -> float:
        c = self.section("comb")
        if c["peak_intensity_W_per_mm2"] is not None and c["avg_power_W"] is not None:
            raise ConfigError("[comb] give either avg_power_W or peak_intensity_W_per_mm2, not both")
        if c["peak_intensity_W_per_mm2"] is not None:
            return c["peak_intensity_W_per_mm2"] / MM2
        if c["avg_power_W"] is not None:
            return 2 * c["avg_power_W"] / (math.pi * c["beam_waist_m"] ** 2)
        raise ConfigError("[comb] needs avg_power_W or peak_intensity_W_per_mm2")

    def teeth(self) -> ToothSet:
        """Explicit teeth for the two-tooth test configuration, else the enumerated comb."""
        from .comb import enumerate_teeth
        from .raman import _intermediates, transition_frequency_hz, two_tooth_set

        c = self.section("comb")
        if c["spectrum"] != "two_tooth":
            return enumerate_teeth(self.comb())
        tr = self.transition()
        det = _need(c, "two_tooth_detuning_Hz", "comb")
        inter = _intermediates(self.levels(), tr)
        if not inter:
            raise ConfigError("no intermediate manifold for the configured transition")
        w_hi = inter[0][0].energy - tr.lower.fine.energy + TWO_PI * det
        w0 = TWO_PI * transition_frequency_hz(tr, self.magnetic_field())
        return two_tooth_set(w_hi, tr.q, w0 / tr.q, self.peak_intensity() / 2)

    def trap(self):
        from scipy.constants import atomic_mass, e

        from .systematics import TrapConfig

        t = self.section("trap")
        moments = {}
        for lbl in ("D5/2", "D3/2"):
            v = t[f"quadrupole_{lbl}_ea0sq"]
            if v is not None:
                moments[lbl] = v
        return TrapConfig(TWO_PI * t["axial_Hz"], TWO_PI * t["radial_Hz"], t["mass_u"] * atomic_mass,
                          t["charge_e"] * e, moments, t["angle_factor"])

    def stark_options(self) -> dict:
        s = self.sections.get("stark") or SCHEMA_DEFAULTS["stark"]
        return {
            "counter_rotating": s["counter_rotating"],
            "cr_sign": s["counter_rotating_sign"],
            "guard": TWO_PI * s["guard_Hz"],
        }

    def budget_entries(self):
        from .systematics import (
            ShiftEntry,
            bbr_shift,
            differential_quadrupole,
            reference_entry,
            second_order_zeeman,
        )

        b = self.sections.get("budget") or SCHEMA_DEFAULTS["budget"]
        out = []
        for name, en in self.entries.items():
            if en["mode"] == "declared":
                out.append(ShiftEntry(name, en["value_Hz"], en["sigma_Hz"], en["upper_bound"], "declared"))
                continue
            kind = en["kind"]
            if kind is None:
                raise ConfigError(f"[entry {name}] computed entries need a kind")
            mj = b["m_J"]
            if kind == "second_order_zeeman":
                z = second_order_zeeman(self.levels(), self.magnetic_field(), mj)
                out.append(ShiftEntry(name, z.shift_hz, z.sigma_field_hz, False, "computed"))
            elif kind == "quadrupole":
                lv = self.levels()
                q = differential_quadrupole(self.trap(), lv.zeeman("D5/2", mj), lv.zeeman("D3/2", mj))
                out.append(ShiftEntry(name, q, float(en["sigma_Hz"]), False, "computed"))
            elif kind == "bbr":
                s = self.section("bbr")
                out.append(ShiftEntry(name, bbr_shift(s["temperature_K"], s["delta_alpha_au"]),
                                      float(en["sigma_Hz"]), False, "computed"))
            elif kind == "reference":
                frac = en["fractional"]
                if frac is None:
                    raise ConfigError(f"[entry {name}] reference entries need fractional")
                out.append(reference_entry(name, frac, self.levels().fine_structure_gap_hz()))
        return out


SCHEMA_DEFAULTS = {
    sec: {k: (None if d is REQUIRED else d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()
}


def _need(section: dict, key: str, name: str):
    v = section.get(key)
    if v is None:
        raise ConfigError(f"[{name}] needs {key}")
    return v


def _parse_section(kind: str, title: str, items: dict[str, str]) -> dict[str, Any]:
    schema = SCHEMA[kind]
    unknown = sorted(set(items) - set(schema))
    if unknown:
        raise ConfigError(f"[{title}] unknown key(s): {', '.join(unknown)}")
    out = {}
    for key, (parse, default) in schema.items():
        if key in items:
            try:
                out[key] = parse(items[key])
            except (ValueError, ArithmeticError) as exc:
                raise ConfigError(f"[{title}] {key} = {items[key]!r}: {exc}") from None
        elif default is REQUIRED:
            raise ConfigError(f"[{title}] missing required key {key}")
        else:
            out[key] = default
    return out


def parse_config(text: str, source: Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse and validate a configuration held in a string."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), empty_lines_in_values=False)
    cp.optionxform = str  # keys are case sensitive
    try:
        cp.read_string(text, source=str(source) if source else "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for spec, value in (overrides or {}).items():
        sec, _, key = spec.rpartition(".")
        if not sec or not key:
            raise ConfigError(f"override {spec!r} must look like section.key")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, value)

    sections, manifolds, links, entries = {}, {}, {}, {}
    for title in cp.sections():
        kind, _, name = title.partition(" ")
        name = name.strip()
        if kind not in SCHEMA:
            raise ConfigError(f"unknown section [{title}]")
        if (kind in NAMED) != bool(name):
            raise ConfigError(f"section [{title}] is malformed")
        parsed = _parse_section(kind, title, dict(cp.items(title)))
        if kind == "manifold":
            manifolds[name] = parsed
        elif kind == "link":
            parts = name.split()
            if len(parts) != 2:
                raise ConfigError(f"[{title}] must name an upper and a lower manifold")
            links[(parts[0], parts[1])] = parsed
        elif kind == "entry":
            entries[name] = parsed
        else:
            sections[kind] = parsed
    cfg = RunConfig(sections, manifolds, links, entries, source,
                    hashlib.sha256(text.encode()).hexdigest())
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    """Cross-field checks that need no physics computation."""
    if cfg.manifolds:
        try:
            cfg.levels()
        except ValueError as exc:
            raise ConfigError(f"level scheme: {exc}") from None
    if cfg.has("comb"):
        c = cfg.section("comb")
        if c["spectrum"] == "gaussian" and c["center_Hz"] is None:
            raise ConfigError("[comb] gaussian spectrum needs center_Hz")
        if c["spectrum"] == "file" and c["spectrum_file"] is None:
            raise ConfigError("[comb] spectrum = file needs spectrum_file")
        if not 0 <= c["efficiency"] <= 1:
            raise ConfigError("[comb] efficiency must lie in [0, 1]")
        if c["peak_intensity_W_per_mm2"] is not None and c["avg_power_W"] is not None:
            raise ConfigError("[comb] give either avg_power_W or peak_intensity_W_per_mm2, not both")
    for name, en in cfg.entries.items():
        if en["mode"] == "computed" and en["kind"] is None:
            raise ConfigError(f"[entry {name}] computed entries need a kind")
        for key in ("value_Hz", "sigma_Hz"):
            try:
                from decimal import Decimal

                Decimal(en[key])
            except ArithmeticError:
                raise ConfigError(f"[entry {name}] {key} is not a number") from None


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    return parse_config(text, p.resolve(), overrides)


def bundled_config_path(name: str) -> Path:
    """Path of a configuration shipped with the package (e.g. ``fiber_comb.cfg``)."""
    return Path(str(resources.files("combraman") / "data" / name))
