"""End-to-end analysis of a measurement set, and a synthetic data generator.

A measurement set is an index CSV with one row per lineshape scan::

    session,sign,intensity_tag,ac729_Hz,reference_Hz,pulse_s,file

``sign`` is ``+`` or ``-`` for the |5/2, +-1/2> -> |3/2, +-1/2> pair,
``reference_Hz`` the frequency the scan detunings are measured from and
``file`` a lineshape CSV ``delta_Hz,p[,counts,shots]`` relative to the index.
"""
from __future__ import annotations

import csv
import math
import os
import tempfile
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np

from .atomic import LevelScheme, MagneticField, linear_zeeman_shift
from .dynamics import lineshape_values, sample_shots
from .inference import (
    DataSeries,
    binomial_sigma,
    extrapolate_zero_intensity,
    fit_sinc2,
    pair_average,
    weighted_mean,
)
from .systematics import ShiftEntry, build_budget

INDEX_COLUMNS = ("session", "sign", "intensity_tag", "ac729_Hz", "reference_Hz", "pulse_s", "file")


class PipelineError(ValueError):
    pass


class GroupingError(PipelineError):
    pass


@dataclass(frozen=True)
class Scan:
    session: str
    sign: str
    intensity_tag: str
    ac729: float
    reference: Decimal
    pulse: float
    path: Path


def read_index(path: str | Path) -> list[Scan]:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PipelineError(f"{path}: empty index")
    missing = [c for c in INDEX_COLUMNS if c not in rows[0]]
    if missing:
        raise PipelineError(f"{path}: missing columns {', '.join(missing)}")
    scans = []
    for k, r in enumerate(rows, start=2):
        sign = r["sign"].strip()
        if sign not in ("+", "-"):
            raise PipelineError(f"{path}:{k}: sign must be + or -")
        try:
            scans.append(Scan(r["session"].strip(), sign, r["intensity_tag"].strip(), float(r["ac729_Hz"]),
                              Decimal(r["reference_Hz"].strip()), float(r["pulse_s"]),
                              path.parent / r["file"].strip()))
        except (ValueError, ArithmeticError) as exc:
            raise PipelineError(f"{path}:{k}: {exc}") from None
    return scans


def read_lineshape(path: Path) -> tuple[DataSeries, int | None]:
    """Return the scan and its shot count (``None`` without count columns)."""
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "delta_Hz" not in rows[0] or "p" not in rows[0]:
        raise PipelineError(f"{path}: need delta_Hz and p columns")
    x = np.array([float(r["delta_Hz"]) for r in rows])
    y = np.array([float(r["p"]) for r in rows])
    if "counts" in rows[0] and "shots" in rows[0]:
        shots = [int(r["shots"]) for r in rows]
        if len(set(shots)) != 1:
            raise PipelineError(f"{path}: shot count varies within the scan")
        return DataSeries(x, y, binomial_sigma([int(r["counts"]) for r in rows], shots)), shots[0]
    return DataSeries(x, y), None


@contextmanager
def _atomic_open(path: Path):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_lineshape(path: Path, delta_hz, p, counts=None, shots=None) -> None:
    with _atomic_open(path) as fh:
        w = csv.writer(fh)
        if counts is None:
            w.writerow(("delta_Hz", "p"))
            for row in zip(delta_hz, p):
                w.writerow([repr(float(v)) for v in row])
        else:
            w.writerow(("delta_Hz", "p", "counts", "shots"))
            for d, pv, c in zip(delta_hz, p, counts):
                w.writerow((repr(float(d)), repr(float(pv)), int(c), int(shots)))


def run_pipeline(index_path: str | Path, entries: list[ShiftEntry], coverage_factor: float = 2.0) -> dict:
    """Fit every scan, pair-average, extrapolate per session, average, correct.

    The final block gives the combined standard uncertainty and the expanded
    uncertainty ``coverage_factor`` times larger.

    Frequencies near 1.8 THz are carried as offsets from the first reference
    so that the Hz digits survive float arithmetic.
    """
    scans = read_index(index_path)
    ref0 = scans[0].reference
    groups: dict[tuple[str, str], dict[str, Scan]] = defaultdict(dict)
    for s in scans:
        key = (s.session, s.intensity_tag)
        if s.sign in groups[key]:
            raise GroupingError(f"session {s.session}, intensity {s.intensity_tag}: duplicate {s.sign} scan")
        groups[key][s.sign] = s
    for (sess, tag), g in groups.items():
        if set(g) != {"+", "-"}:
            lacking = ({"+", "-"} - set(g)).pop()
            raise GroupingError(f"session {sess}, intensity {tag}: missing the {lacking}1/2 partner")

    fits, pairs = [], []
    per_session: dict[str, list] = defaultdict(list)
    for (sess, tag), g in sorted(groups.items()):
        freqs = {}
        for sign in ("+", "-"):
            s = g[sign]
            series, shots = read_lineshape(s.path)
            fit = fit_sinc2(series, s.pulse, shots=shots)
            off = float(s.reference - ref0) + fit["center_Hz"]
            freqs[sign] = (off, fit.error("center_Hz"))
            fits.append({
                "session": sess, "intensity_tag": tag, "sign": sign, "file": s.path.name,
                "center_Hz": str(ref0 + Decimal(repr(float(off)))), "sigma_Hz": fit.error("center_Hz"),
                "omega": fit["omega"], "amplitude": fit["amplitude"], "chisq": fit.chisq, "dof": fit.dof,
            })
        mean, sig = pair_average(freqs["+"], freqs["-"])
        x = 0.5 * (g["+"].ac729 + g["-"].ac729)
        pairs.append({"session": sess, "intensity_tag": tag, "ac729_Hz": x,
                      "splitting_Hz": str(ref0 + Decimal(repr(float(mean)))), "sigma_Hz": sig})
        per_session[sess].append((x, mean, sig))

    sessions, intercepts = [], []
    for sess in sorted(per_session):
        pts = per_session[sess]
        xs, ys, ss = (np.array(v) for v in zip(*pts))
        if np.ptp(xs) == 0:
            # one intensity only: nothing to extrapolate, use the weighted mean
            wm = weighted_mean(list(zip(ys, ss)))
            b0, sb, slope, sslope = wm.value, wm.quoted_sigma, 0.0, 0.0
        else:
            ex = extrapolate_zero_intensity(xs, ys, ss)
            b0, sb, slope, sslope = ex.intercept, ex.intercept_sigma, ex.slope, ex.slope_sigma
        intercepts.append((b0, sb))
        sessions.append({"session": sess, "intercept_Hz": str(ref0 + Decimal(repr(float(b0)))), "sigma_Hz": sb,
                         "slope": slope, "slope_sigma": sslope, "n_points": len(pts)})

    wm = weighted_mean(intercepts)
    measured = ref0 + Decimal(repr(float(wm.value)))
    budget = build_budget(entries, measured, Decimal(repr(float(wm.quoted_sigma))))
    stat, syst = wm.quoted_sigma, budget.total_sigma
    return {
        "fits": fits,
        "pair_averages": pairs,
        "sessions": sessions,
        "weighted_mean": {**wm.as_dict(), "value_Hz": str(measured)},
        "budget": budget.as_dict(),
        "final": {
            "corrected_Hz": str(budget.corrected_exact),
            "statistical_sigma_Hz": stat,
            "systematic_sigma_Hz": syst,
            "combined_sigma_Hz": math.hypot(stat, syst),
            "coverage_factor": coverage_factor,
            "expanded_uncertainty_Hz": coverage_factor * math.hypot(stat, syst),
        },
    }


@dataclass(frozen=True)
class SynthSettings:
    nu_D: Decimal
    sessions: int
    ac729: tuple[float, ...]
    stark_slope: float
    session_offset_sigma: float
    reference_error: float
    points: int
    shots: int
    span: float
    pulse: float
    contrast: float = 1.0


def generate_dataset(
    out_dir: str | Path,
    settings: SynthSettings,
    levels: LevelScheme,
    B: MagneticField,
    systematic_shift: Decimal,
    seed: int,
) -> Path:
    """Write a synthetic measurement set and return the index path.

    Each scan is a pi-pulse sinc^2 centred on nu_D + systematic shift
    +- the linear Zeeman shift of the +-1/2 pair + stark_slope * ac729,
    sampled with binomial noise.  Scan references carry a random error of
    ``reference_error`` Hz so the fit has to find the centre.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    ref_rng = np.random.Generator(np.random.PCG64(ref_seq))
    up_p, lo_p = levels.zeeman("D5/2", 0.5), levels.zeeman("D3/2", 0.5)
    zeeman = linear_zeeman_shift(up_p, B) - linear_zeeman_shift(lo_p, B)
    omega = math.pi / settings.pulse
    delta = np.linspace(-settings.span, settings.span, settings.points)
    rows = []
    seeds = iter(noise_seq.spawn(settings.sessions * len(settings.ac729) * 2))
    offsets = ref_rng.normal(0.0, settings.session_offset_sigma, settings.sessions) \
        if settings.session_offset_sigma > 0 else np.zeros(settings.sessions)
    base = settings.nu_D + systematic_shift
    for s in range(settings.sessions):
        for k, ac in enumerate(settings.ac729):
            for sign, z in (("+", zeeman), ("-", -zeeman)):
                true_off = settings.stark_slope * ac + z + offsets[s]
                ref_err = ref_rng.uniform(-settings.reference_error, settings.reference_error)
                reference = base + Decimal(repr(float(round(z + ref_err, 3))))
                centre = true_off - float(reference - base)
                p = np.clip(settings.contrast * lineshape_values(omega, settings.pulse, 2 * math.pi * (delta - centre)),
                            0.0, 1.0)
                shot = sample_shots(p, settings.shots, int(next(seeds).generate_state(1)[0]))
                name = f"s{s}_i{k}_{'p' if sign == '+' else 'm'}.csv"
                write_lineshape(out / name, delta, shot.fractions, shot.counts, settings.shots)
                rows.append((f"S{s}", sign, f"I{k}", repr(ac), str(reference), repr(settings.pulse), name))
    index = out / "index.csv"
    with _atomic_open(index) as fh:
        w = csv.writer(fh)
        w.writerow(INDEX_COLUMNS)
        w.writerows(rows)
    return index
