"""Closed-form first and second moments and the two-exponential Feynman-alpha curve.

Two evaluation paths are provided:

* canonical: moments re-derived from the generating-function equation with
  the transfer terms acting on the correct populations; the curve follows
  from partial fractions of the Laplace-transformed detector covariance.
  This path is authoritative.
* paper-literal: the amplitude formulas exactly as published (including
  their printed structure), kept separate so that any disagreement with the
  canonical path can be measured rather than hidden.

Notation used in the code: ``a = lambda1 - nu1^1 lambda1f`` and
``b = lambda2 - nu1^2 lambda2f`` are the net removal rates,
``c = lambdaT1 * lambdaT2`` is the coupling, and the decay constants
``omega1 <= omega2`` are the roots of ``s^2 - (a+b) s + (ab - c)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateRoots, NonPositiveRoot
from .model import SystemParams

SERIES_SWITCH = 1e-3
DEGENERATE_RTOL = 1e-9
# Below this relative gap the two-root divided difference loses accuracy and
# is replaced by a centred derivative expansion.
NEAR_CONFLUENT_RTOL = 1e-6


@dataclass(frozen=True)
class OmegaPair:
    omega1: float
    omega2: float

    @property
    def sum(self) -> float:
        return self.omega1 + self.omega2

    @property
    def product(self) -> float:
        return self.omega1 * self.omega2


@dataclass(frozen=True)
class StationaryState:
    mean_n1: float
    mean_n2: float
    detection_rate: float
    mu_xx: float
    mu_xy: float
    mu_yy: float


@dataclass(frozen=True)
class FeynmanCurve:
    """Sampled Y(T) = variance/mean - 1 at increasing gate widths."""

    gate_times: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.gate_times, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise ValueError("gate_times and y must be 1-D arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("gate times must be strictly increasing")
        object.__setattr__(self, "gate_times", t)
        object.__setattr__(self, "y", y)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != t.shape:
                raise ValueError("sigma must match gate_times")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.gate_times.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.sigma is None:
            w.writerow(["gate_time", "y_value"])
            for t, y in zip(self.gate_times, self.y):
                w.writerow([repr(float(t)), repr(float(y))])
        else:
            w.writerow(["gate_time", "y_value", "stderr"])
            for t, y, s in zip(self.gate_times, self.y, self.sigma):
                w.writerow([repr(float(t)), repr(float(y)), repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeynmanCurve":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        if not rows:
            raise ValueError("empty curve file")
        header = [h.strip() for h in rows[0]]
        if header[:2] != ["gate_time", "y_value"] or header[2:] not in ([], ["stderr"]):
            raise ValueError(f"unexpected curve header {header}")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
        sigma = data[:, 2] if len(header) == 3 else None
        return cls(data[:, 0], data[:, 1], sigma)

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path) -> "FeynmanCurve":
        return cls.from_csv(Path(path).read_text())


@dataclass(frozen=True)
class YAmplitudes:
    y1_amp: float
    y2_amp: float
    y0: float
    y1_aux: float | None = None
    y2_aux: float | None = None

    @property
    def plateau(self) -> float:
        return self.y1_amp + self.y2_amp


# -- roots --------------------------------------------------------------

def characteristic(params: SystemParams, s):
    """H(s) = s^2 + (omega1 + omega2) s + omega1 omega2, built from the intensities."""
    return s * s + params.root_sum * s + params.root_product


def omega_roots(params: SystemParams) -> OmegaPair:
    """Decay constants of the coupled system, ascending.

    The larger root is formed without cancellation and the smaller one is
    recovered from the product of the roots.
    """
    a, b, c = params.removal1, params.removal2, params.coupling
    total = a + b
    prod = a * b - c
    if not (total > 0 and prod > 0):
        raise NonPositiveRoot(
            f"system is not subcritical: root sum {total!r}, root product {prod!r}")
    disc = math.sqrt((a - b) ** 2 + 4.0 * c)
    big = 0.5 * (total + disc)
    small = prod / big
    return OmegaPair(small, big)


def omega_roots_paper(params: SystemParams) -> OmegaPair:
    """Roots via the published closed form, then sorted ascending.

    The published leading term ``lambda2 + lambda2`` is read as
    ``lambda1 + lambda2``. Evaluated naively (no cancellation guard).
    """
    r1, r2 = params.region1, params.region2
    lam1, lam2 = r1.total, r2.total
    f1 = r1.induced_nu1 * r1.fission_intensity
    f2 = r2.induced_nu1 * r2.fission_intensity
    half_trace = 0.5 * (lam1 + lam2 - (f1 + f2))
    radical = 0.5 * math.sqrt(((lam1 - lam2) - (f1 - f2)) ** 2 + 4.0 * params.coupling)
    plus, minus = half_trace + radical, half_trace - radical
    if not minus > 0:
        raise NonPositiveRoot(f"published root formula gives non-positive root {minus!r}")
    return OmegaPair(minus, plus)


# -- stationary moments -------------------------------------------------

def _driving_per_n1(params: SystemParams, om: OmegaPair) -> tuple[float, float]:
    """Second-moment source terms of the XX and YY equations divided by mean N1.

    Dividing out N1 keeps Y(T) finite as the source strength goes to zero.
    """
    r1, r2, src = params.region1, params.region2, params.source
    b = params.removal2
    q1 = r1.induced_nu2 * r1.fission_intensity
    if src.emission_nu1 > 0:
        q1 += src.emission_nu2 * om.product / (src.emission_nu1 * b)
    q2 = r2.induced_nu2 * r2.fission_intensity * r1.transfer_out_intensity / b
    return q1, q2


def stationary_state(params: SystemParams) -> StationaryState:
    """Stationary means and modified second moments of the neutron populations."""
    om = omega_roots(params)
    a, b = params.removal1, params.removal2
    lt1, lt2 = params.region1.transfer_out_intensity, params.region2.transfer_out_intensity
    src = params.source
    inflow = src.strength * src.emission_nu1
    n1 = inflow * b / om.product
    n2 = lt1 * inflow / om.product
    # driving terms of the XX and YY equations
    d1 = params.region1.induced_nu2 * params.region1.fission_intensity * n1 + src.strength * src.emission_nu2
    d2 = params.region2.induced_nu2 * params.region2.fission_intensity * n2
    denom = 2.0 * (a + b) * om.product
    mu_xx = (d1 * (b * b + om.product) + d2 * lt2 * lt2) / denom
    mu_xy = (d1 * b * lt1 + d2 * a * lt2) / denom
    mu_yy = (d1 * lt1 * lt1 + d2 * (a * a + om.product)) / denom
    return StationaryState(n1, n2, params.region1.detection_intensity * n1, mu_xx, mu_xy, mu_yy)


# -- gate functions -------------------------------------------------------

def gate_factor(x):
    """1 - (1 - exp(-x))/x, with a short series near x = 0."""
    x = np.asarray(x, dtype=float)
    small = x < SERIES_SWITCH
    xs = np.where(small, 1.0, x)
    direct = 1.0 + np.expm1(-xs) / xs
    series = x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
    return np.where(small, series, direct)


def _gate_factor_slope(x):
    """d/dx of gate_factor."""
    x = np.asarray(x, dtype=float)
    small = x < SERIES_SWITCH
    xs = np.where(small, 1.0, x)
    direct = -(np.expm1(-xs) + xs * np.exp(-xs)) / (xs * xs)
    series = 0.5 - x * (1.0 / 3.0 - x * (1.0 / 8.0 - x / 30.0))
    return np.where(small, series, direct)


# -- canonical curve ------------------------------------------------------

def _canonical_coefficients(params: SystemParams, om: OmegaPair) -> tuple[float, float]:
    """(alpha, beta) with Laplace(mu_XZ)/N1 = (alpha s + beta) / (s H(s))."""
    a, b = params.removal1, params.removal2
    lt1, lt2 = params.region1.transfer_out_intensity, params.region2.transfer_out_intensity
    lam_d = params.region1.detection_intensity
    q1, q2 = _driving_per_n1(params, om)
    denom = 2.0 * (a + b) * om.product
    mxx = (q1 * (b * b + om.product) + q2 * lt2 * lt2) / denom
    alpha = lam_d * mxx
    beta = lam_d * (q1 * b * b + q2 * lt2 * lt2) / (2.0 * om.product)
    return alpha, beta


def canonical_amplitudes(params: SystemParams) -> YAmplitudes:
    """Amplitudes of the two exponential terms of the canonical curve.

    Raises DegenerateRoots when the decay constants coincide, since the
    curve then has a t*exp(-omega t) term instead of two separate exponentials.
    """
    om = omega_roots(params)
    if (om.omega2 - om.omega1) <= DEGENERATE_RTOL * om.omega2:
        raise DegenerateRoots("equal decay constants have no two-amplitude form")
    alpha, beta = _canonical_coefficients(params, om)
    gap = om.omega2 - om.omega1
    y1 = 2.0 * (beta - alpha * om.omega1) / (om.omega1 * gap)
    y2 = -2.0 * (beta - alpha * om.omega2) / (om.omega2 * gap)
    return YAmplitudes(y1, y2, 2.0 * beta / om.product)


def canonical_plateau(params: SystemParams) -> float:
    """Large-gate limit of the canonical Y(T)."""
    om = omega_roots(params)
    _, beta = _canonical_coefficients(params, om)
    return 2.0 * beta / om.product


def _canonical_y(alpha, beta, om: OmegaPair, t):
    def phi(w):
        return (beta / w - alpha) * gate_factor(w * t)

    w1, w2 = om.omega1, om.omega2
    gap = w2 - w1
    if gap > NEAR_CONFLUENT_RTOL * w2:
        return 2.0 * (phi(w1) - phi(w2)) / gap
    # divided difference -> -phi'(w) at the midpoint; error O(gap^2)
    w = 0.5 * (w1 + w2)
    dphi = -beta / (w * w) * gate_factor(w * t) + (beta / w - alpha) * t * _gate_factor_slope(w * t)
    return -2.0 * dphi


def feynman_curve_canonical(params: SystemParams, gates: Sequence[float]) -> FeynmanCurve:
    """Y(T) from the exact double time-integral of the detector covariance."""
    t = np.asarray(gates, dtype=float)
    if np.any(t <= 0):
        raise ValueError("gate times must be positive")
    om = omega_roots(params)
    alpha, beta = _canonical_coefficients(params, om)
    return FeynmanCurve(t, _canonical_y(alpha, beta, om, t))


# -- paper-literal curve --------------------------------------------------

def paper_amplitudes(params: SystemParams) -> YAmplitudes:
    """Y1, Y2, Y0 and the auxiliary y1, y2 evaluated from the published formulas.

    The printed y1/y2 expressions have unbalanced parentheses; they are read as
    three fractions over the common denominator b^2 (w2 - w1) w1 w2, with the
    leading 1/2 applied to the first fraction only.
    """
    om = omega_roots_paper(params)
    w1, w2 = om.omega1, om.omega2
    if abs(w2 - w1) < DEGENERATE_RTOL * w2:
        raise DegenerateRoots(
            "published amplitudes divide by omega2 - omega1; use the canonical curve")
    r1 = params.region1
    lam1 = r1.total
    a, b, c = params.removal1, params.removal2, params.coupling
    nu2 = r1.induced_nu2
    lam_d = r1.detection_intensity
    y0 = nu2 * lam_d * b * c / (w1 * w1 * w2 * w2)
    den = b * b * (w2 - w1) * w1 * w2
    y1_aux = (0.5 * (2.0 * b ** 3 * (w2 - lam1) * (w1 + w2) - c * c * w2) / den
              + c * b * a * (w2 - w1) / den
              + (w1 + w2) * (b + w1 + 3.0 * w2) / den)
    y2_aux = (0.5 * (2.0 * b ** 3 * (w2 - b) * (w1 + w2) + c * c * w1) / den
              + c * b * a * (w2 - w1) / den
              - (w1 + w2) * (b + 3.0 * w1 + w2) / den)
    y1 = y0 * w1 / (w1 + w2) * y1_aux
    y2 = y0 * w2 / (w1 + w2) * y2_aux
    return YAmplitudes(y1, y2, y0, y1_aux, y2_aux)


def two_exponential_curve(y1: float, y2: float, omega1: float, omega2: float, gates) -> np.ndarray:
    """Y1 g(omega1 T) + Y2 g(omega2 T) with g(x) = 1 - (1 - e^-x)/x."""
    t = np.asarray(gates, dtype=float)
    return y1 * gate_factor(omega1 * t) + y2 * gate_factor(omega2 * t)


def feynman_curve_paper(params: SystemParams, gates: Sequence[float]) -> tuple[FeynmanCurve, YAmplitudes]:
    t = np.asarray(gates, dtype=float)
    if np.any(t <= 0):
        raise ValueError("gate times must be positive")
    amps = paper_amplitudes(params)
    om = omega_roots_paper(params)
    y = two_exponential_curve(amps.y1_amp, amps.y2_amp, om.omega1, om.omega2, t)
    return FeynmanCurve(t, y), amps


# -- mode comparison ------------------------------------------------------

@dataclass(frozen=True)
class ModeComparison:
    gate_times: np.ndarray
    canonical: np.ndarray
    paper: np.ndarray
    rel_deviation: np.ndarray
    canonical_plateau: float
    paper_plateau: float
    paper_y0: float
    canonical_at_long_gate: float
    tolerance: float

    @property
    def max_rel_deviation(self) -> float:
        return float(np.max(np.abs(self.rel_deviation))) if self.rel_deviation.size else 0.0

    @property
    def plateau_rel_deviation(self) -> float:
        return abs(self.paper_plateau - self.canonical_at_long_gate) / abs(self.canonical_at_long_gate)

    @property
    def agree(self) -> bool:
        return self.plateau_rel_deviation < self.tolerance and self.max_rel_deviation < self.tolerance

    @property
    def paper_sum_identity_deviation(self) -> float:
        """Relative mismatch between printed Y1 + Y2 and printed Y0."""
        if self.paper_y0 == 0:
            return abs(self.paper_plateau)
        return abs(self.paper_plateau - self.paper_y0) / abs(self.paper_y0)

    def report(self) -> str:
        lines = [
            f"modes {'AGREE' if self.agree else 'DISAGREE'} (tolerance {self.tolerance:g})",
            f"canonical plateau            {self.canonical_plateau!r}",
            f"canonical Y(1e6/omega1)      {self.canonical_at_long_gate!r}",
            f"published Y1+Y2              {self.paper_plateau!r}",
            f"published Y0                 {self.paper_y0!r}",
            f"published Y1+Y2 vs Y0 rel    {self.paper_sum_identity_deviation:.6e}",
            f"max pointwise rel deviation  {self.max_rel_deviation:.6e}",
            "gate_time,canonical,published,rel_deviation",
        ]
        for t, yc, yp, d in zip(self.gate_times, self.canonical, self.paper, self.rel_deviation):
            lines.append(f"{t!r},{yc!r},{yp!r},{d!r}")
        return "\n".join(lines)


def compare_modes(params: SystemParams, gates: Sequence[float], tolerance: float = 1e-6) -> ModeComparison:
    """Evaluate both paths on ``gates`` and report every pointwise deviation."""
    canon = feynman_curve_canonical(params, gates)
    paper, amps = feynman_curve_paper(params, gates)
    om = omega_roots(params)
    long_gate = feynman_curve_canonical(params, [1e6 / om.omega1]).y[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.where(canon.y != 0, (paper.y - canon.y) / np.abs(canon.y), paper.y - canon.y)
    return ModeComparison(canon.gate_times, canon.y, paper.y, dev,
                          canonical_plateau(params), amps.plateau, amps.y0,
                          float(long_gate), tolerance)


# -- published-table diagnostics --------------------------------------------

def nu_eff(params: SystemParams) -> float:
    """nu * lambda_f / (lambda1 + lambda2)."""
    r1 = params.region1
    return r1.induced_nu1 * r1.fission_intensity / (r1.total + params.region2.total)


@dataclass(frozen=True)
class OmegaTableRow:
    name: str
    derived: OmegaPair
    published: OmegaPair
    residual1: float
    residual2: float

    @property
    def derived_product(self) -> float:
        return self.derived.product

    @property
    def published_product(self) -> float:
        return self.published.product

    @property
    def matches(self) -> bool:
        return (math.isclose(self.derived.omega1, self.published.omega1, rel_tol=5e-3)
                and math.isclose(self.derived.omega2, self.published.omega2, rel_tol=5e-3))


def omega_table_diagnostic(fixtures: dict[str, SystemParams],
                           published: dict[str, tuple[float, float]]) -> list[OmegaTableRow]:
    """Derived decay constants next to published ones, with H(omega) residuals.

    H(s) has its zeros at s = -omega; the residual of H(-omega) is taken
    relative to the largest of its three terms, so a value near machine
    precision certifies the root.
    """
    rows = []
    for name, params in fixtures.items():
        om = omega_roots(params)
        res = []
        for w in (om.omega1, om.omega2):
            scale = max(w * w, params.root_sum * w, abs(params.root_product))
            res.append(abs(w * w - params.root_sum * w + params.root_product) / scale)
        pub = OmegaPair(*sorted(published[name]))
        rows.append(OmegaTableRow(name, om, pub, res[0], res[1]))
    return rows


def format_omega_diagnostic(rows: list[OmegaTableRow]) -> str:
    lines = ["setup,derived_omega1,derived_omega2,derived_product,"
             "published_omega1,published_omega2,published_product,match,H_residual_max"]
    for r in rows:
        lines.append(",".join([
            r.name, f"{r.derived.omega1:.6f}", f"{r.derived.omega2:.6f}", f"{r.derived_product:.6f}",
            f"{r.published.omega1:.6f}", f"{r.published.omega2:.6f}", f"{r.published_product:.6f}",
            "yes" if r.matches else "NO", f"{max(r.residual1, r.residual2):.3e}",
        ]))
    return "\n".join(lines)
