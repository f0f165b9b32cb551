"""Estimation chain: lineshape and Rabi fits, linear extrapolation, averaging.

Nonlinear fits default to scipy's Levenberg-Marquardt; a plain step-halving
Gauss-Newton solver is kept as an alternative.  Anything with the signature
of :func:`gauss_newton` can be passed as ``solver``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .dynamics import TWO_PI, FWHM_TO_SIGMA, _nodes, damped_rabi_values, lineshape_values, rabi_probability


class FitError(RuntimeError):
    pass


class ConvergenceError(FitError):
    pass


class DegenerateDataError(FitError, ValueError):
    pass


@dataclass(frozen=True)
class DataSeries:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, float)
        y = np.asarray(self.y, float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("x and y must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite data")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.sigma is not None:
            s = np.asarray(self.sigma, float)
            if s.shape != x.shape:
                raise ValueError("sigma must match x in length")
            if not np.all(s > 0):
                raise ValueError("uncertainties must be positive")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return int(self.x.size)

    @property
    def weighted(self) -> bool:
        return self.sigma is not None

    @property
    def sigma_or_one(self) -> np.ndarray:
        return self.sigma if self.sigma is not None else np.ones_like(self.y)


@dataclass(frozen=True)
class FitResult:
    names: tuple[str, ...]
    estimates: np.ndarray
    covariance: np.ndarray
    chisq: float
    dof: int
    converged: bool = True
    iterations: int = 0
    scale: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def __getitem__(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "names": list(self.names),
            "estimates": [float(v) for v in self.estimates],
            "errors": [float(v) for v in self.errors],
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "chisq": float(self.chisq),
            "dof": int(self.dof),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "error_scale": float(self.scale),
        }


# --- solver -----------------------------------------------------------------


@dataclass(frozen=True)
class SolveResult:
    p: np.ndarray
    jac: np.ndarray
    residual: np.ndarray
    converged: bool
    iterations: int


def gauss_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0,
    max_iter: int = 200,
    xtol: float = 1e-10,
    max_halvings: int = 40,
) -> SolveResult:
    """Minimise ||r(p)||^2 by Gauss-Newton steps with step halving.

    Jacobian columns are rescaled before the least-squares solve so that the
    rank cutoff does not depend on parameter units; rank-deficient steps take
    the minimum-norm solution.  Converged once the largest relative step falls
    below ``xtol``.
    """
    p = np.array(p0, dtype=float)
    r = residual(p)
    cost = float(r @ r)
    for it in range(1, max_iter + 1):
        J = jacobian(p)
        norms = np.linalg.norm(J, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        step = np.linalg.lstsq(J / norms, -r, rcond=None)[0] / norms
        scale = np.maximum(np.abs(p), 1e-300)
        rel = float(np.max(np.abs(step) / scale))
        t = 1.0
        for _ in range(max_halvings):
            trial = p + t * step
            r_trial = residual(trial)
            c_trial = float(r_trial @ r_trial)
            if np.isfinite(c_trial) and c_trial <= cost:
                break
            t *= 0.5
        else:
            # no descent along the step: at the noise floor if the step is tiny
            return SolveResult(p, J, r, rel < 1e-7, it)
        p, r, cost = trial, r_trial, c_trial
        if t * rel < xtol:
            return SolveResult(p, jacobian(p), r, True, it)
    return SolveResult(p, jacobian(p), r, False, max_iter)


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0,
    max_nfev: int = 5000,
    tol: float = 1e-12,
) -> SolveResult:
    """MINPACK Levenberg-Marquardt via :func:`scipy.optimize.least_squares`."""
    p0 = np.array(p0, dtype=float)
    sol = least_squares(residual, p0, jac=jacobian, method="lm", x_scale="jac",
                        xtol=tol, ftol=tol, gtol=tol, max_nfev=max_nfev)
    return SolveResult(sol.x, jacobian(sol.x), residual(sol.x), bool(sol.status > 0), int(sol.nfev))


Solver = Callable[..., SolveResult]
DEFAULT_SOLVER = levenberg_marquardt


def _covariance(J: np.ndarray, chisq: float, dof: int, weighted: bool):
    cov = np.linalg.pinv(J.T @ J)
    cov = 0.5 * (cov + cov.T)
    scale = 1.0
    if dof > 0:
        red = chisq / dof
        if not weighted or red > 1:
            scale = red
    return cov * scale, math.sqrt(scale)


def least_squares_fit(
    model: Callable,
    model_jac: Callable | None,
    series: DataSeries,
    p0,
    names: Sequence[str],
    solver: Solver = DEFAULT_SOLVER,
    fd_step: float = 1e-6,
) -> FitResult:
    """Weighted nonlinear least squares of ``model(x, p)`` to ``series``."""
    x, y, s = series.x, series.y, series.sigma_or_one
    npar = len(names)
    dof = len(series) - npar
    if dof < 1:
        raise DegenerateDataError(f"need more than {npar} points")

    def res(p):
        return (model(x, p) - y) / s

    if model_jac is not None:
        def jac(p):
            return model_jac(x, p) / s[:, None]
    else:
        def jac(p):
            J = np.empty((x.size, npar))
            for k in range(npar):
                h = fd_step * max(abs(p[k]), 1e-3)
                dp = np.zeros(npar)
                dp[k] = h
                J[:, k] = (res(p + dp) - res(p - dp)) / (2 * h)
            return J

    sol = solver(res, jac, p0)
    if not sol.converged:
        raise ConvergenceError(f"fit did not converge after {sol.iterations} iterations")
    chisq = float(sol.residual @ sol.residual)
    cov, scale = _covariance(sol.jac, chisq, dof, series.weighted)
    return FitResult(tuple(names), sol.p, cov, chisq, dof, True, sol.iterations, scale)


# --- binomial uncertainties -------------------------------------------------


def binomial_sigma(counts, shots, z: float = 1.0) -> np.ndarray:
    """Wilson-interval half-width, floored at 1/(2 n)."""
    k = np.asarray(counts, float)
    n = np.broadcast_to(np.asarray(shots, float), k.shape)
    if np.any(n < 1) or np.any(k < 0) or np.any(k > n):
        raise ValueError("counts must lie in [0, shots] with shots >= 1")
    p = k / n
    half = z / (1 + z * z / n) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return np.maximum(half, 1 / (2 * n))


# --- sinc^2 ---------------------------------------------------------------


def _sinc2_model(T):
    def f(x, p):
        c0, om, amp = p
        return lineshape_values(om, T, TWO_PI * x, amp, TWO_PI * c0)

    def jac(x, p):
        c0, om, amp = p
        d = TWO_PI * (x - c0)
        w2 = om * om + d * d
        w = np.sqrt(w2)
        s, co = np.sin(0.5 * w * T), np.cos(0.5 * w * T)
        dfdw = amp * om * om * s * (T * co / w2 - 2 * s / (w2 * w))
        return np.column_stack(
            (
                dfdw * (d / w) * (-TWO_PI),
                2 * amp * om * s * s / w2 + dfdw * om / w,
                om * om * s * s / w2,
            )
        )

    return f, jac


def model_binomial_sigma(p, shots) -> np.ndarray:
    """Binomial standard deviation at the model probability, kept above zero."""
    n = np.asarray(shots, float)
    p = np.clip(np.asarray(p, float), 0.0, 1.0)
    return np.sqrt((p * (1 - p) + 1 / (4 * n)) / n)


def fit_sinc2(
    series: DataSeries,
    pulse_duration: float,
    solver: Solver = DEFAULT_SOLVER,
    shots: int | None = None,
    reweight: int = 2,
) -> FitResult:
    """Fit ``amplitude * P(2 pi (x - center))`` of a square pulse of length T.

    ``x`` is detuning in Hz.  Returns (center [Hz], omega [rad/s], amplitude).
    With ``shots`` the weights are re-derived ``reweight`` times from the
    fitted curve; weights taken from the noisy counts themselves pull the
    centre towards whichever side happens to sit near zero, and can drag
    the fit into the weak-drive valley (omega -> 0, amplitude -> inf), so
    the first pass is then unweighted.
    """
    if not pulse_duration > 0:
        raise ValueError("pulse duration must be positive")
    if len(series) < 5:
        raise DegenerateDataError("sinc^2 fit needs at least 5 points")
    y = series.y
    if np.ptp(y) == 0:
        raise DegenerateDataError("constant data carry no lineshape")
    top = y >= np.quantile(y, 0.75)
    w = np.clip(y[top], 0, None)
    c0 = float(np.sum(w * series.x[top]) / np.sum(w)) if w.sum() > 0 else float(series.x[np.argmax(y)])
    p0 = (c0, math.pi / pulse_duration, float(y.max()))
    f, jac = _sinc2_model(pulse_duration)
    names = ("center_Hz", "omega", "amplitude")
    first = series if shots is None else DataSeries(series.x, y)
    res = least_squares_fit(f, jac, first, p0, names, solver)
    if shots is not None:
        for _ in range(reweight):
            sigma = model_binomial_sigma(f(series.x, res.estimates), shots)
            res = least_squares_fit(f, jac, DataSeries(series.x, y, sigma), tuple(res.estimates), names, solver)
    if res.estimates[1] < 0:
        est = res.estimates.copy()
        est[1] = -est[1]
        flip = np.diag([1.0, -1.0, 1.0])
        res = FitResult(res.names, est, flip @ res.covariance @ flip, res.chisq, res.dof,
                        res.converged, res.iterations, res.scale)
    return res


# --- damped Rabi ----------------------------------------------------------


def periodogram_peak(t, y, oversample: int = 10) -> tuple[float, float]:
    """Angular frequency of the largest discrete-frequency periodogram peak.

    Returns (omega, fraction of the variance carried by the peak).
    """
    t = np.asarray(t, float)
    yc = np.asarray(y, float) - np.mean(y)
    span = np.ptp(t)
    var = float(yc @ yc)
    if span <= 0 or var == 0:
        return 0.0, 0.0
    dt = np.median(np.diff(np.sort(t)))
    w_max = math.pi / dt if dt > 0 else TWO_PI * len(t) / span
    w = np.linspace(TWO_PI / span / 2, w_max, oversample * len(t))
    power = np.abs(np.exp(-1j * np.outer(w, t)) @ yc) ** 2
    k = int(np.argmax(power))
    return float(w[k]), float(power[k] * 2 / (len(t) * var))


def fit_damped_rabi(series: DataSeries, solver: Solver = DEFAULT_SOLVER) -> FitResult:
    """Fit (C/2)(1 - exp(-t/tau) cos(Omega t)) to a trace; returns (C, tau, omega)."""
    t, y = series.x, series.y
    if len(series) < 8:
        raise DegenerateDataError("damped-Rabi fit needs at least 8 points")
    w0, frac = periodogram_peak(t, y)
    if np.ptp(y) < 1e-12 or w0 == 0 or frac < 0.05:
        raise DegenerateDataError("no oscillation detected")
    if w0 * np.ptp(t) < 4 * math.pi:
        raise DegenerateDataError("trace covers fewer than two oscillation periods")
    C0 = float(np.clip(2 * np.mean(y), 1e-3, 1.0))
    p0 = _damped_rabi_start(t, y, C0, w0)

    def f(x, p):
        C, g, om = p
        return 0.5 * C * (1 - np.exp(-g * x) * np.cos(om * x))

    def jac(x, p):
        C, g, om = p
        e = np.exp(-g * x)
        co, si = np.cos(om * x), np.sin(om * x)
        return np.column_stack((0.5 * (1 - e * co), 0.5 * C * x * e * co, 0.5 * C * x * e * si))

    res = least_squares_fit(f, jac, series, p0, ("C", "gamma", "omega"), solver)
    C, g, om = res.estimates
    # report tau = 1/gamma with the covariance pushed through the Jacobian
    tau = 1 / g if g > 0 else math.inf
    T = np.diag([1.0, -1 / g**2 if g > 0 else 0.0, 1.0])
    cov = T @ res.covariance @ T.T
    return FitResult(("C", "tau", "omega"), np.array([C, tau, abs(om)]), cov, res.chisq, res.dof,
                     res.converged, res.iterations, res.scale, {"gamma": float(g)})


def _damped_rabi_start(t, y, C0, w0):
    # a coarse grid over the decay rate and a local refinement of the frequency
    span = np.ptp(t)
    best, best_cost = None, math.inf
    for g in np.concatenate(([0.0], np.geomspace(0.1, 30, 15) / span)):
        for om in w0 * (1 + np.linspace(-0.05, 0.05, 21)):
            m = damped_rabi_values(C0, 1 / g if g > 0 else math.inf, om, t)
            c = float(np.sum((m - y) ** 2))
            if c < best_cost:
                best, best_cost = (C0, g, om), c
    return best


# --- averaged Rabi ------------------------------------------------------------


def _averaged_values(eta, fwhm_hz, omega_unit, t, n, center_hz=0.0):
    x, w = _nodes(n)
    sigma = TWO_PI * abs(fwhm_hz) * FWHM_TO_SIGMA
    delta = TWO_PI * center_hz + math.sqrt(2) * sigma * x
    p = rabi_probability(abs(eta) * omega_unit, delta[None, :], t[:, None])
    return p @ w / math.sqrt(math.pi)


def _nodes_for(eta, fwhm_hz, omega_unit, t, tol, n0, n_max):
    n = n0
    while n < n_max:
        a = _averaged_values(eta, fwhm_hz, omega_unit, t, n)
        b = _averaged_values(eta, fwhm_hz, omega_unit, t, 2 * n)
        if np.max(np.abs(a - b)) < tol:
            return n
        n *= 2
    return n_max


def fit_averaged_rabi(
    series: DataSeries,
    omega_unit: float,
    nodes: int = 64,
    tol: float = 1e-6,
    max_nodes: int = 1024,
    solver: Solver = DEFAULT_SOLVER,
) -> FitResult:
    """Two-parameter fit (eta_eff, linewidth FWHM in Hz) of a jitter-averaged trace.

    The Rabi frequency is ``eta_eff * omega_unit`` where ``omega_unit`` is the
    deterministic comb sum with unit efficiency.  The quadrature node count is
    fixed during the fit so the model stays smooth, and re-checked at the end.
    """
    t, y = series.x, series.y
    if not omega_unit > 0:
        raise ValueError("omega_unit must be positive")
    if np.ptp(t) * omega_unit < TWO_PI:
        raise DegenerateDataError("trace shorter than one Rabi period")
    if len(series) < 4:
        raise DegenerateDataError("averaged-Rabi fit needs at least 4 points")

    w_pk, _ = periodogram_peak(t, y)
    eta_c = w_pk / omega_unit if w_pk > 0 else 1.0
    f_unit = omega_unit / TWO_PI
    best, best_cost = None, math.inf
    n_grid = _nodes_for(eta_c, 2 * f_unit, omega_unit, t, 1e-3, nodes, max_nodes)
    for eta in eta_c * np.linspace(0.8, 1.2, 41):
        # no zero width: the model is even in the width, so 0 is a stationary point
        for fw in np.array([0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0]) * eta * f_unit:
            c = float(np.sum(((_averaged_values(eta, fw, omega_unit, t, n_grid) - y) / series.sigma_or_one) ** 2))
            if c < best_cost:
                best, best_cost = (eta, fw), c

    n = _nodes_for(best[0], max(2 * best[1], 1e-9), omega_unit, t, tol, nodes, max_nodes)
    names = ("eta_eff", "linewidth_Hz")
    for _ in range(3):
        model = lambda x, p, n=n: _averaged_values(p[0], p[1], omega_unit, x, n)
        res = least_squares_fit(model, None, series, best, names, solver)
        need = _nodes_for(res.estimates[0], res.estimates[1], omega_unit, t, tol, nodes, max_nodes)
        if need <= n:
            break
        n, best = need, tuple(res.estimates)
    else:
        raise ConvergenceError("quadrature did not settle during the averaged-Rabi fit")
    est = np.abs(res.estimates)
    return FitResult(names, est, res.covariance, res.chisq, res.dof, res.converged, res.iterations,
                     res.scale, {"nodes": int(n), "omega_unit": float(omega_unit)})


# --- linear extrapolation and averages --------------------------------------


def fit_line(series: DataSeries) -> FitResult:
    """Weighted straight line; returns (intercept, slope)."""
    x, y = series.x, series.y
    if len(series) < 2 or np.ptp(x) == 0:
        raise DegenerateDataError("a line needs at least two distinct x values")
    w = 1 / series.sigma_or_one**2
    # centre the problem: large offsets (THz-scale y, Hz-scale x) stay well conditioned
    xm = float(np.sum(w * x) / np.sum(w))
    ym = float(np.sum(w * y) / np.sum(w))
    dx, dy = x - xm, y - ym
    sxx = float(np.sum(w * dx * dx))
    slope = float(np.sum(w * dx * dy)) / sxx
    b0 = ym - slope * xm
    resid = dy - slope * dx
    chisq = float(np.sum(w * resid**2))
    dof = len(series) - 2
    var_b = 1 / sxx
    var_a = 1 / np.sum(w) + xm * xm / sxx
    cov = np.array([[var_a, -xm / sxx], [-xm / sxx, var_b]])
    scale = 1.0
    if dof > 0:
        red = chisq / dof
        if not series.weighted or red > 1:
            scale = red
    return FitResult(("intercept", "slope"), np.array([b0, slope]), cov * scale, chisq, dof, True, 0,
                     math.sqrt(scale), {"x_mean": xm, "y_mean": ym})


@dataclass(frozen=True)
class Extrapolation:
    intercept: float
    intercept_sigma: float
    slope: float
    slope_sigma: float
    fit: FitResult

    def as_dict(self) -> dict:
        return {
            "intercept_Hz": self.intercept,
            "intercept_sigma_Hz": self.intercept_sigma,
            "slope": self.slope,
            "slope_sigma": self.slope_sigma,
            "chisq": self.fit.chisq,
            "dof": self.fit.dof,
        }


def extrapolate_zero_intensity(x, y, sigma=None) -> Extrapolation:
    """Intercept at zero light shift of measured splittings versus 729-probe light shift."""
    fit = fit_line(DataSeries(x, y, sigma))
    return Extrapolation(fit["intercept"], fit.error("intercept"), fit["slope"], fit.error("slope"), fit)


def pair_average(plus: tuple[float, float], minus: tuple[float, float]) -> tuple[float, float]:
    """Unweighted mean of the +m and -m frequencies; cancels linear Zeeman exactly."""
    (a, sa), (b, sb) = plus, minus
    return 0.5 * (a + b), 0.5 * math.hypot(sa, sb)


@dataclass(frozen=True)
class WeightedMean:
    value: float
    sigma_propagated: float
    sigma_scatter: float
    chisq: float
    n: int

    @property
    def quoted_sigma(self) -> float:
        return max(self.sigma_propagated, self.sigma_scatter)

    @property
    def quoted_source(self) -> str:
        return "scatter" if self.sigma_scatter > self.sigma_propagated else "propagated"

    def as_dict(self) -> dict:
        return {
            "value_Hz": self.value,
            "sigma_propagated_Hz": self.sigma_propagated,
            "sigma_scatter_Hz": self.sigma_scatter,
            "quoted_sigma_Hz": self.quoted_sigma,
            "quoted_source": self.quoted_source,
            "chisq": self.chisq,
            "n": self.n,
        }


def weighted_mean(values: Sequence[tuple[float, float]]) -> WeightedMean:
    """Inverse-variance mean with both the propagated and the scatter-based error."""
    if not values:
        raise ValueError("weighted mean of nothing")
    v = np.array([a for a, _ in values], float)
    s = np.array([b for _, b in values], float)
    if not np.all(s > 0):
        raise ValueError("uncertainties must be positive")
    w = 1 / s**2
    # subtract a reference first so 1e12-scale values keep their Hz digits
    ref = v[0]
    mean = ref + float(np.sum(w * (v - ref)) / np.sum(w))
    prop = float(1 / math.sqrt(np.sum(w)))
    chisq = float(np.sum(w * (v - mean) ** 2))
    n = v.size
    scatter = math.sqrt(chisq / ((n - 1) * np.sum(w))) if n > 1 else 0.0
    return WeightedMean(mean, prop, scatter, chisq, n)
