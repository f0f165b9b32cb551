"""Command-line front end.

    combraman <subcommand> --config FILE [--out DIR] [--seed N] [flags]

Every run writes ``<subcommand>.manifest.json`` next to its outputs.  Exit
status is 0 on success, 1 for usage or configuration errors and 2 when the
computation itself fails.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_VERSION = 1
TWO_PI = 2 * math.pi


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- output helpers ---------------------------------------------------------


class Run:
    """Collects outputs of one command and writes them atomically."""

    def __init__(self, command: str, out: Path, cfg, seed: int, argv: list[str]):
        self.command = command
        self.out = out
        self.cfg = cfg
        self.seed = seed
        self.argv = argv
        self.outputs: list[dict] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def _write(self, name: str, data: bytes) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.outputs.append({"file": name, "sha256": hashlib.sha256(data).hexdigest()})
        return path

    def json(self, name: str, payload: dict) -> Path:
        body = {"schema_version": SCHEMA_VERSION, "command": self.command, **payload}
        return self._write(name, (json.dumps(_jsonable(body), indent=2, sort_keys=False) + "\n").encode())

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return self._write(name, buf.getvalue().encode())

    def text(self, name: str, text: str) -> Path:
        return self._write(name, text.encode())

    def manifest(self) -> Path:
        m = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "argv": self.argv,
            "config": str(self.cfg.source) if self.cfg is not None and self.cfg.source else None,
            "config_sha256": self.cfg.sha256 if self.cfg is not None else None,
            "version": __version__,
            "seed": self.seed,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": self.outputs,
        }
        data = (json.dumps(m, indent=2) + "\n").encode()
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / f"{self.command}.manifest.json"
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=".manifest.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, float):
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Decimal):
        return str(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def _grid(spec: str) -> np.ndarray:
    try:
        a, b, n = spec.split(":")
        n = int(n)
        if n < 2:
            raise ValueError
        return np.linspace(float(a), float(b), n)
    except ValueError:
        raise UsageError(f"grid {spec!r} must look like start:stop:count with count >= 2") from None


def _read_xy(path: Path):
    """Read ``x,y[,sigma]`` or a lineshape file ``delta_Hz,p[,counts,shots]``.

    Returns the series and the shot count (``None`` unless counts are given).
    """
    from .inference import DataSeries
    from .pipeline import read_lineshape

    with path.open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise UsageError(f"{path}: empty file")
    header = [h.strip() for h in header]
    if header[:2] == ["delta_Hz", "p"]:
        return read_lineshape(path)
    if header[:2] != ["x", "y"]:
        raise UsageError(f"{path}: expected header x,y[,sigma] or delta_Hz,p[,counts,shots]")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    sigma = np.array([float(r["sigma"]) for r in rows]) if "sigma" in header else None
    return DataSeries(x, y, sigma), None


# --- commands ---------------------------------------------------------------


def _raman_payload(res, tr, comb_rep):
    return {
        "transition": tr.label(),
        "q": tr.q,
        "rep_rate_Hz": comb_rep / TWO_PI,
        "omega_R": res.omega_R,
        "omega_R_Hz": res.omega_R_hz,
        "omega_R_coherent_Hz": res.omega_R_coherent / TWO_PI,
        "eta": res.eta,
        "eta_eff": res.eta_eff,
        "n_pairs": res.n_pairs,
        "mean_detuning_Hz": res.mean_detuning / TWO_PI,
        "residual_detuning_Hz": res.residual_detuning / TWO_PI,
        "approximate": res.approximate,
        "per_level": {k: {"re": v.real, "im": v.imag, "abs_Hz": abs(v) * res.eta / TWO_PI}
                      for k, v in res.per_level.items()},
    }


def cmd_rabi(args, cfg, run):
    from .raman import cw_rabi, raman_rabi, theta_scan

    lv, tr, pol, B = cfg.levels(), cfg.transition(), cfg.polarization(), cfg.magnetic_field()
    teeth = cfg.teeth()
    eff = cfg.get("comb", "efficiency")
    res = raman_rabi(None, lv, tr, pol, B, eff, teeth=teeth, workers=args.workers)
    total_intensity = cfg.peak_intensity()
    cw = eff * cw_rabi(lv, tr, pol, total_intensity, res.mean_detuning)
    payload = _raman_payload(res, tr, teeth.rep_rate)
    payload["cw_equivalent"] = cw
    payload["cw_equivalent_Hz"] = cw / TWO_PI
    if args.theta_scan:
        th = np.radians(_grid(args.theta_scan))
        sc = theta_scan(None, lv, tr, th, B, eff, teeth=teeth)
        run.csv("theta_scan.csv", ("theta_deg", "omega_R_Hz", "signed_Hz"),
                zip(np.degrees(th), sc.omega_R / TWO_PI, sc.signed / TWO_PI))
        payload["zero_crossings_deg"] = [math.degrees(z) for z in sc.zero_crossings()]
    run.json("rabi.json", payload)


def cmd_stark(args, cfg, run):
    from .raman import _DifferentialStark, ac_stark_shift

    lv, tr, pol = cfg.levels(), cfg.transition(), cfg.polarization()
    teeth = cfg.teeth()
    opts = cfg.stark_options()
    ini = ac_stark_shift(None, lv, tr.initial, pol, teeth=teeth, workers=args.workers, **opts)
    fin = ac_stark_shift(None, lv, tr.final, pol, teeth=teeth, workers=args.workers, **opts)
    payload = {
        "transition": tr.label(),
        "theta_deg": math.degrees(pol.theta),
        "initial_shift_Hz": ini.shift_hz,
        "final_shift_Hz": fin.shift_hz,
        "differential_Hz": ini.shift_hz - fin.shift_hz,
        "initial_per_level_Hz": ini.per_level,
        "final_per_level_Hz": fin.per_level,
        "counter_rotating": ini.counter_rotating,
        "counter_rotating_sign": opts["cr_sign"],
    }
    if args.theta_scan:
        f = _DifferentialStark(None, lv, tr, opts["counter_rotating"], opts["cr_sign"], opts["guard"], teeth)
        from .atomic import linear_polarization

        th = _grid(args.theta_scan)
        vals = [f(linear_polarization(math.radians(t), pol.perpendicular)) for t in th]
        run.csv("stark_scan.csv", ("theta_deg", "differential_Hz"), zip(th, vals))
    run.json("stark.json", payload)


def cmd_magic_pol(args, cfg, run):
    from .raman import find_magic_polarization

    lv, tr = cfg.levels(), cfg.transition()
    m = cfg.sections.get("magic") or {"lo_deg": 0.0, "hi_deg": 90.0, "tol_deg": 1e-3, "bracket_points": 91}
    opts = cfg.stark_options()
    res = find_magic_polarization(None, lv, tr, math.radians(m["lo_deg"]), math.radians(m["hi_deg"]),
                                  math.radians(m["tol_deg"]), n_bracket=m["bracket_points"],
                                  teeth=cfg.teeth(), **opts)
    run.json("magic_pol.json", {
        "transition": tr.label(),
        "found": res.found,
        "theta_deg": res.theta_deg,
        "differential_at_bounds_Hz": list(res.value_at_bounds),
        "iterations": res.iterations,
        "counter_rotating_sign": opts["cr_sign"],
    })


def cmd_bandwidth_scan(args, cfg, run):
    from .raman import bandwidth_scan

    b = cfg.section("bandwidth")
    c = cfg.section("comb")
    res = bandwidth_scan(cfg.levels(), cfg.transition(), b["ratios"], b["intensity_W_per_mm2"] * 1e6,
                         TWO_PI * b["mean_detuning_Hz"], TWO_PI * c["rep_rate_Hz"], cfg.polarization(),
                         cfg.magnetic_field(), b["truncation"], b["constant_detuning"], c["beam_waist_m"])
    run.csv("bandwidth_scan.csv", ("bandwidth_ratio", "rabi_ratio", "n_pairs"),
            zip(res.ratios, res.rabi_ratio, res.n_pairs))
    run.json("bandwidth_scan.json", {"ratios": res.ratios, "rabi_ratio": res.rabi_ratio,
                                     "n_pairs": res.n_pairs, "constant_detuning": b["constant_detuning"]})


def _dynamics_omega(cfg):
    d = cfg.section("dynamics")
    if d["rabi_Hz"] is not None:
        return TWO_PI * d["rabi_Hz"]
    from .raman import raman_rabi

    res = raman_rabi(None, cfg.levels(), cfg.transition(), cfg.polarization(), cfg.magnetic_field(),
                     cfg.get("comb", "efficiency"), teeth=cfg.teeth())
    return res.omega_R


def _unit_omega(cfg):
    """Comb Rabi frequency with unit efficiency and all pair phases equal."""
    from .raman import raman_rabi

    res = raman_rabi(None, cfg.levels(), cfg.transition(), cfg.polarization(), cfg.magnetic_field(),
                     1.0, teeth=cfg.teeth())
    return res.omega_R_coherent


def cmd_dynamics(args, cfg, run):
    from .dynamics import DetuningDistribution, averaged_trace, sample_shots

    d = cfg.section("dynamics")
    omega = _dynamics_omega(cfg)
    t = np.linspace(0.0, d["t_max_s"], d["n_points"])
    dist = (DetuningDistribution.gaussian(d["linewidth_Hz"], d["center_Hz"]) if d["linewidth_Hz"] > 0
            else DetuningDistribution.sharp(d["center_Hz"]))
    tr = averaged_trace(omega, dist, t, nodes=d["nodes"], tol=d["tol"])
    if args.invert:
        tr = tr.inverted()
    if args.shots:
        s = sample_shots(tr.populations, args.shots, run.seed)
        run.csv("trace.csv", ("t_s", "p", "counts", "shots"),
                zip(t, s.fractions, s.counts, [args.shots] * t.size))
    else:
        run.csv("trace.csv", ("t_s", "p"), zip(t, tr.populations))
    run.json("dynamics.json", {"omega_R": omega, "omega_R_Hz": omega / TWO_PI,
                               "linewidth_Hz": d["linewidth_Hz"], "inverted": bool(args.invert),
                               "n_points": int(t.size)})


def cmd_lineshape(args, cfg, run):
    from .dynamics import lineshape, sample_shots

    d = cfg.section("dynamics")
    T = d["pulse_s"]
    omega = math.pi / T if args.pi_pulse or d["rabi_Hz"] is None else TWO_PI * d["rabi_Hz"]
    det_hz = np.linspace(-d["span_Hz"], d["span_Hz"], args.points)
    sp = lineshape(omega, T, TWO_PI * det_hz)
    if args.shots:
        s = sample_shots(sp.populations, args.shots, run.seed)
        run.csv("lineshape.csv", ("delta_Hz", "p", "counts", "shots"),
                zip(det_hz, s.fractions, s.counts, [args.shots] * det_hz.size))
    else:
        run.csv("lineshape.csv", ("delta_Hz", "p"), zip(det_hz, sp.populations))
    run.json("lineshape.json", {"omega": omega, "pulse_s": T, "points": int(det_hz.size)})


def cmd_fit(args, cfg, run):
    from .inference import fit_averaged_rabi, fit_damped_rabi, fit_line, fit_sinc2

    series, shots = _read_xy(Path(args.input))
    if args.model == "sinc2":
        if args.pulse_s is None:
            if cfg is None:
                raise UsageError("--pulse-s is required without a config")
            args.pulse_s = cfg.get("dynamics", "pulse_s")
        res = fit_sinc2(series, args.pulse_s, shots=shots)
    elif args.model == "damped-rabi":
        res = fit_damped_rabi(series)
    elif args.model == "averaged-rabi":
        if args.omega_unit_hz is None:
            if cfg is None:
                raise UsageError("--omega-unit-hz is required without a config")
            omega_unit = _unit_omega(cfg)
        else:
            omega_unit = TWO_PI * args.omega_unit_hz
        res = fit_averaged_rabi(series, omega_unit)
    else:
        res = fit_line(series)
    run.json("fit.json", {"model": args.model, "input": Path(args.input).name, **res.as_dict()})


def cmd_extrapolate(args, cfg, run):
    from .inference import extrapolate_zero_intensity

    s, _ = _read_xy(Path(args.input))
    ex = extrapolate_zero_intensity(s.x, s.y, s.sigma)
    run.json("extrapolate.json", ex.as_dict())


def cmd_budget(args, cfg, run):
    from .systematics import build_budget

    b = cfg.section("budget")
    if b["measured_Hz"] is None:
        raise UsageError("[budget] needs measured_Hz")
    budget = build_budget(cfg.budget_entries(), b["measured_Hz"], b["measured_sigma_Hz"])
    payload = budget.as_dict()
    payload["corrected_Hz"] = str(budget.corrected_exact)
    run.json("budget.json", payload)
    run.text("budget.txt", budget.table() + "\n")


def cmd_phase_fit(args, cfg, run):
    from .comb import fit_spectral_phase, load_phase_samples

    w, ph, wt = load_phase_samples(Path(args.input))
    wc = TWO_PI * args.center_hz if args.center_hz is not None else None
    fitted, cov = fit_spectral_phase(w, ph, wt, wc)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    fs2 = 1e-30
    run.json("phase_fit.json", {
        "omega_c": fitted.omega_c,
        "center_Hz": fitted.omega_c / TWO_PI,
        "phi0_rad": fitted.phi0, "phi0_sigma_rad": err[0],
        "group_delay_s": fitted.tau_g, "group_delay_sigma_s": err[1],
        "D2_fs2": fitted.D2 / fs2, "D2_sigma_fs2": err[2] / fs2,
        "covariance": cov,
        "rms_residual_rad": float(np.sqrt(np.mean(fitted.residual_phase**2)))
        if fitted.residual_phase is not None else 0.0,
    })


def cmd_pipeline(args, cfg, run):
    from .pipeline import run_pipeline

    index = Path(args.index) if args.index else cfg.resolve(cfg.get("pipeline", "index"))
    report = run_pipeline(index, cfg.budget_entries())
    run.json("pipeline.json", report)


def cmd_synth(args, cfg, run):
    from .pipeline import SynthSettings, generate_dataset
    from .systematics import to_decimal

    s = cfg.section("synth")
    settings = SynthSettings(Decimal(s["nu_D_Hz"]), s["sessions"], s["ac729_Hz"], s["stark_slope"],
                             s["session_offset_sigma_Hz"], s["reference_error_Hz"], s["points"], s["shots"],
                             s["span_Hz"], s["pulse_s"], s["contrast"])
    shift = sum((to_decimal(e.shift) for e in cfg.budget_entries()), Decimal(0))
    index = generate_dataset(run.out, settings, cfg.levels(), cfg.magnetic_field(), shift, run.seed)
    # register the generated files with this run's manifest
    for p in sorted(run.out.glob("s*_i*_*.csv")) + [index]:
        run.outputs.append({"file": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    run.json("synth.json", {"nu_D_Hz": s["nu_D_Hz"], "systematic_shift_Hz": str(shift),
                            "index": index.name, "scans": settings.sessions * len(settings.ac729) * 2})


COMMANDS = {
    "rabi": (cmd_rabi, True),
    "stark": (cmd_stark, True),
    "magic-pol": (cmd_magic_pol, True),
    "bandwidth-scan": (cmd_bandwidth_scan, True),
    "dynamics": (cmd_dynamics, True),
    "lineshape": (cmd_lineshape, True),
    "fit": (cmd_fit, False),
    "extrapolate": (cmd_extrapolate, False),
    "budget": (cmd_budget, True),
    "phase-fit": (cmd_phase_fit, False),
    "pipeline": (cmd_pipeline, True),
    "synth": (cmd_synth, True),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="combraman", description="Frequency-comb Raman transition simulation and analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (.cfg); bare names of shipped configs also work")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("--workers", type=int, default=1, help="worker threads for tooth sums")
    helps = {
        "rabi": "Raman Rabi frequency and efficiencies",
        "stark": "comb light shifts of both clock states",
        "magic-pol": "polarization angle with zero differential light shift",
        "bandwidth-scan": "femtosecond to CW Rabi ratio versus spectral width",
        "dynamics": "population trace, optionally jitter-averaged and sampled",
        "lineshape": "sinc^2 spectrum of a square pulse",
        "fit": "fit a model to CSV data",
        "extrapolate": "zero-intensity linear extrapolation",
        "budget": "systematic-shift budget",
        "phase-fit": "quadratic fit of measured spectral phase",
        "pipeline": "full analysis of a measurement set",
        "synth": "generate a synthetic measurement set",
    }
    sp = {name: sub.add_parser(name, parents=[common], help=helps[name]) for name in COMMANDS}
    for name in ("rabi", "stark"):
        sp[name].add_argument("--theta-scan", metavar="A:B:N", help="scan theta in degrees")
    sp["dynamics"].add_argument("--invert", action="store_true", help="report the initial-state population")
    sp["dynamics"].add_argument("--shots", type=int, default=0, help="binomial sampling per point")
    sp["lineshape"].add_argument("--points", type=int, default=30)
    sp["lineshape"].add_argument("--shots", type=int, default=0)
    sp["lineshape"].add_argument("--pi-pulse", action="store_true", help="use Omega = pi / pulse")
    sp["fit"].add_argument("--model", choices=("sinc2", "damped-rabi", "averaged-rabi", "line"), required=True)
    sp["fit"].add_argument("--input", required=True)
    sp["fit"].add_argument("--pulse-s", type=float)
    sp["fit"].add_argument("--omega-unit-hz", type=float, help="unit-efficiency Rabi frequency in Hz")
    sp["extrapolate"].add_argument("--input", required=True)
    sp["phase-fit"].add_argument("--input", required=True)
    sp["phase-fit"].add_argument("--center-hz", type=float)
    sp["pipeline"].add_argument("--index", help="index CSV (default: [pipeline] index)")
    return p


def _overrides(items):
    out = {}
    for it in items:
        key, sep, value = it.partition("=")
        if not sep:
            raise UsageError(f"--set {it!r} must look like section.key=value")
        out[key.strip()] = value.strip()
    return out


def main(argv: list[str] | None = None) -> int:
    from .config import ConfigError, bundled_config_path, load_config

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    func, needs_config = COMMANDS[args.command]
    try:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg = None
        if args.config is not None:
            path = args.config
            if not path.exists() and path.parent == Path(".") and bundled_config_path(path.name).exists():
                path = bundled_config_path(path.name)  # bare name of a shipped config
            cfg = load_config(path, _overrides(args.set))
        elif needs_config:
            raise UsageError(f"{args.command} needs --config")
        seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
        run = Run(args.command, args.out, cfg, seed, argv)
    except (UsageError, ConfigError) as exc:
        print(f"combraman {args.command}: {exc}", file=sys.stderr)
        return 1
    try:
        func(args, cfg, run)
    except (UsageError, ConfigError) as exc:
        print(f"combraman {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        mod = type(exc).__module__.rpartition(".")[2]
        print(f"combraman {args.command}: {mod}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    run.manifest()
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
