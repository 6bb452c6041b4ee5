"""Weighted nonlinear least squares for Feynman curves and die-away histograms.

Both models are linear in their amplitudes, so the starting point comes from
a variable-projection grid search over the decay constants (amplitudes solved
exactly at each grid node), followed by damped Gauss-Newton
(Levenberg-Marquardt) polishing of all parameters with the decay constants
carried as logarithms to keep them positive.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .analytic import FeynmanCurve, gate_factor
from .errors import DegenerateFit, NotConverged

GRADIENT_RTOL = 1e-8
DEGENERATE_RATIO = 0.9


@dataclass(frozen=True)
class FeynmanFit:
    y1_amp: float
    y2_amp: float
    omega1: float
    omega2: float
    covariance: np.ndarray
    chi2_per_dof: float
    converged: bool
    n_iterations: int
    component_unconstrained: bool = False
    gradient_norm: float = 0.0

    @property
    def params(self) -> np.ndarray:
        return np.array([self.y1_amp, self.y2_amp, self.omega1, self.omega2])

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def predict(self, gates) -> np.ndarray:
        return feynman_model(self.params, gates)

    def to_json(self) -> str:
        d = {
            "y1_amp": self.y1_amp, "y2_amp": self.y2_amp,
            "omega1": self.omega1, "omega2": self.omega2,
            "stderr": self.stderr.tolist(),
            "covariance": self.covariance.tolist(),
            "chi2_per_dof": self.chi2_per_dof,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "component_unconstrained": self.component_unconstrained,
            "gradient_norm": self.gradient_norm,
        }
        return json.dumps(d, indent=2) + "\n"


@dataclass(frozen=True)
class DieAwayFit:
    amplitude: float
    omega: float
    background: float
    covariance: np.ndarray
    chi2_per_dof: float
    n_iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def omega_stderr(self) -> float:
        return float(math.sqrt(max(self.covariance[1, 1], 0.0)))


def feynman_model(p, gates) -> np.ndarray:
    y1, y2, w1, w2 = p
    t = np.asarray(gates, dtype=float)
    return y1 * gate_factor(w1 * t) + y2 * gate_factor(w2 * t)


def _feynman_jacobian(p, t) -> np.ndarray:
    """d model / d (Y1, Y2, w1, w2)."""
    y1, y2, w1, w2 = p
    cols = [gate_factor(w1 * t), gate_factor(w2 * t)]
    for amp, w in ((y1, w1), (y2, w2)):
        x = w * t
        # dg/dx = (1 - e^-x (1 + x)) / x^2, series near 0
        small = x < 1e-3
        xs = np.where(small, 1.0, x)
        slope = np.where(small, 0.5 - x / 3.0 + x * x / 8.0,
                         -(np.expm1(-xs) + xs * np.exp(-xs)) / (xs * xs))
        cols.append(amp * t * slope)
    return np.column_stack(cols)


def _linear_amplitudes(basis, y, sigma):
    a = basis / sigma[:, None]
    coef, *_ = np.linalg.lstsq(a, y / sigma, rcond=None)
    r = a @ coef - y / sigma
    return coef, float(r @ r)


def _grid_start(t, y, sigma, n=40):
    lo, hi = 0.05 / t.max(), 20.0 / t.min()
    grid = np.geomspace(lo, hi, n)
    best = None
    for i, w1 in enumerate(grid):
        g1 = gate_factor(w1 * t)
        for w2 in grid[i + 1:]:
            coef, chi2 = _linear_amplitudes(np.column_stack([g1, gate_factor(w2 * t)]), y, sigma)
            if best is None or chi2 < best[0]:
                best = (chi2, np.array([coef[0], coef[1], w1, w2]))
    return best[1]


def _default_start(t, y, sigma):
    """omega2 = 1/T at half plateau, omega1 = omega2/10, amplitudes by linear solve."""
    half = 0.5 * y[-1]
    above = np.nonzero(y >= half)[0]
    t_half = t[above[0]] if above.size else t[-1]
    w2 = 1.0 / t_half
    w1 = w2 / 10.0
    coef, _ = _linear_amplitudes(np.column_stack([gate_factor(w1 * t), gate_factor(w2 * t)]), y, sigma)
    return np.array([coef[0], coef[1], w1, w2])


def _polish(t, y, sigma, p0, max_nfev=2000):
    def to_x(p):
        return np.array([p[0], p[1], math.log(p[2]), math.log(p[3])])

    def to_p(x):
        return np.array([x[0], x[1], math.exp(x[2]), math.exp(x[3])])

    def resid(x):
        return (feynman_model(to_p(x), t) - y) / sigma

    def jac(x):
        p = to_p(x)
        j = _feynman_jacobian(p, t) / sigma[:, None]
        j[:, 2] *= p[2]
        j[:, 3] *= p[3]
        return j

    res = least_squares(resid, to_x(p0), jac=jac, method="lm", xtol=1e-15, ftol=1e-15,
                        gtol=1e-15, max_nfev=max_nfev)
    return to_p(res.x), res


def fit_feynman(curve: FeynmanCurve, init: FeynmanFit | None = None) -> FeynmanFit:
    """Fit Y1 g(omega1 T) + Y2 g(omega2 T) to a curve with standard errors.

    Returns the fit with ``omega1 <= omega2``. ``component_unconstrained``
    flags a fit in which one exponential is not identified by the data (for
    example a single-exponential truth). A fit that misses the gradient
    criterion comes back with ``converged=False``. Raises DegenerateFit when
    the fitted omega1/omega2 exceeds 0.9; the partial fit is attached.
    """
    t, y = curve.gate_times, curve.y
    if curve.sigma is None or np.any(~(curve.sigma > 0)):
        raise ValueError("fit needs a positive standard error on every point")
    if t.size < 6:
        raise ValueError(f"fit needs at least 6 points, got {t.size}")
    if t.max() < 10.0 * t.min():
        raise ValueError("gate times must span at least a decade")
    sigma = curve.sigma

    starts = [_default_start(t, y, sigma), _grid_start(t, y, sigma)]
    if init is not None:
        starts.insert(0, init.params)
    best = None
    for p0 in starts:
        if not (p0[2] > 0 and p0[3] > 0):
            continue
        p, res = _polish(t, y, sigma, p0)
        chi2 = float(res.fun @ res.fun)
        if best is None or chi2 < best[0]:
            best = (chi2, p, res)
    chi2, p, res = best
    if p[2] > p[3]:
        p = p[[1, 0, 3, 2]]

    jac = _feynman_jacobian(p, t) / sigma[:, None]
    r = (feynman_model(p, t) - y) / sigma
    grad = jac.T @ r
    scale = np.linalg.norm(jac) * max(np.linalg.norm(r), 1.0)
    gnorm = float(np.linalg.norm(grad))
    converged = bool(res.status > 0 and gnorm <= GRADIENT_RTOL * scale)
    dof = max(t.size - 4, 1)
    try:
        cov = np.linalg.inv(jac.T @ jac)
        cov = 0.5 * (cov + cov.T)
    except np.linalg.LinAlgError:
        cov = np.full((4, 4), np.inf)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    # a component whose amplitude is indistinguishable from zero, or whose
    # decay constant is uncertain by more than itself, is not identified
    unconstrained = bool(not np.all(np.isfinite(se))
                         or any(se[i + 2] > p[i + 2] or abs(p[i]) < 2.0 * se[i] for i in (0, 1)))
    fit = FeynmanFit(float(p[0]), float(p[1]), float(p[2]), float(p[3]), cov, chi2 / dof,
                     converged, int(res.nfev), unconstrained, gnorm)
    if p[2] / p[3] > DEGENERATE_RATIO:
        raise DegenerateFit(
            f"omega1/omega2 = {p[2] / p[3]:.3f} > {DEGENERATE_RATIO}; "
            "a single-exponential model is recommended", fit=fit)
    return fit


def residuals_csv(curve: FeynmanCurve, fit: FeynmanFit) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gate_time", "y_value", "model", "residual", "normalized_residual"])
    model = fit.predict(curve.gate_times)
    sig = curve.sigma if curve.sigma is not None else np.ones_like(model)
    for t, y, m, s in zip(curve.gate_times, curve.y, model, sig):
        w.writerow([repr(float(t)), repr(float(y)), repr(float(m)), repr(float(y - m)),
                    repr(float((y - m) / s))])
    return buf.getvalue()


# -- single-exponential die-away -----------------------------------------------

def fit_dieaway(times, rate, stderr) -> DieAwayFit:
    """Fit A exp(-omega t) + B to a decaying rate histogram."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(rate, dtype=float)
    s = np.asarray(stderr, dtype=float)
    if t.size < 5:
        raise ValueError(f"die-away fit needs at least 5 bins, got {t.size}")
    if np.any(~(s > 0)):
        raise ValueError("standard errors must be positive")
    t0 = t.min()
    tau = t - t0
    span = tau.max()
    if span <= 0:
        raise ValueError("bins must span a positive time range")

    grid = np.geomspace(0.01 / span, 100.0 / max(np.min(np.diff(np.sort(t))), span / t.size), 400)
    chi = []
    for w in grid:
        coef, c2 = _linear_amplitudes(np.column_stack([np.exp(-w * tau), np.ones_like(tau)]), y, s)
        chi.append((c2, w, coef))
    k = int(np.argmin([c[0] for c in chi]))
    _, w0, coef0 = chi[k]
    diag = {"grid_index": k, "grid_size": grid.size}

    def resid(x):
        a, lw, b = x
        return (a * np.exp(-math.exp(lw) * tau) + b - y) / s

    def jac(x):
        a, lw, b = x
        w = math.exp(lw)
        e = np.exp(-w * tau)
        return np.column_stack([e, -a * w * tau * e, np.ones_like(tau)]) / s[:, None]

    res = least_squares(resid, [coef0[0], math.log(w0), coef0[1]], jac=jac, method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    a, lw, b = res.x
    w = math.exp(lw)
    e = np.exp(-w * tau)
    j = np.column_stack([e, -a * tau * e, np.ones_like(tau)]) / s[:, None]
    try:
        cov = np.linalg.inv(j.T @ j)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.inf)
    chi2 = float(res.fun @ res.fun)
    dof = max(t.size - 3, 1)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    diag.update({"status": int(res.status), "amplitude_significance":
                 float(abs(a) / se[0]) if se[0] > 0 else float("inf")})
    # amplitude referenced to the first bin rather than t = t0
    fit = DieAwayFit(float(a), float(w), float(b), cov, chi2 / dof, int(res.nfev), diag)
    if k in (0, grid.size - 1) or not np.all(np.isfinite(se)) or not abs(a) > 3.0 * se[0] \
            or not se[1] < w:
        raise NotConverged(
            "decay constant is not identifiable from this histogram "
            f"(amplitude {a:.3g} +/- {se[0]:.3g}, omega {w:.3g} +/- {se[1]:.3g})", best=fit)
    return fit
