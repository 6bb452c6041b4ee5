"""Numerical oracle: forward integration of the mean and modified second-moment equations.

Nothing here uses the closed forms in :mod:`feynalpha.analytic`; the right-hand
sides are written directly from the reaction intensities, and the stationary
second moments come from a 3x3 linear solve. State layout::

    [N1, N2, Z, mu_XX, mu_XY, mu_YY, mu_XZ, mu_YZ, mu_ZZ]

where ``mu_AB = <AB> - <A><B>`` for A != B and ``mu_AA = <A(A-1)> - <A>^2``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .analytic import FeynmanCurve
from .errors import StiffnessFailure, ToleranceNotMet
from .model import SystemParams

DEFAULT_RTOL = 1e-10
DEFAULT_MAX_EVALS = 2_000_000

STATE_NAMES = ("n1", "n2", "z", "mu_xx", "mu_xy", "mu_yy", "mu_xz", "mu_yz", "mu_zz")


@dataclass(frozen=True)
class MomentState:
    t: float
    n1: float
    n2: float
    z: float
    mu_xx: float
    mu_xy: float
    mu_yy: float
    mu_xz: float
    mu_yz: float
    mu_zz: float

    @classmethod
    def from_vector(cls, t, v) -> "MomentState":
        return cls(float(t), *(float(x) for x in v))

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in STATE_NAMES])

    @property
    def y_value(self) -> float:
        return self.mu_zz / self.z


def _coefficients(params: SystemParams):
    r1, r2, src = params.region1, params.region2, params.source
    k1 = -r1.total + r1.induced_nu1 * r1.fission_intensity
    k2 = -r2.total + r2.induced_nu1 * r2.fission_intensity
    return dict(
        k1=k1, k2=k2,
        t1=r1.transfer_out_intensity, t2=r2.transfer_out_intensity,
        d=r1.detection_intensity,
        f1=r1.induced_nu2 * r1.fission_intensity,
        f2=r2.induced_nu2 * r2.fission_intensity,
        s1=src.strength * src.emission_nu1,
        s2=src.strength * src.emission_nu2,
    )


def moment_rhs(params: SystemParams):
    """Right-hand side ``f(t, state)`` of the nine coupled moment equations."""
    c = _coefficients(params)
    k1, k2, t1, t2, d = c["k1"], c["k2"], c["t1"], c["t2"], c["d"]
    f1, f2, s1, s2 = c["f1"], c["f2"], c["s1"], c["s2"]

    def rhs(t, v):
        n1, n2, _z, xx, xy, yy, xz, yz, _zz = v
        return np.array([
            k1 * n1 + t2 * n2 + s1,
            t1 * n1 + k2 * n2,
            d * n1,
            2.0 * k1 * xx + 2.0 * t2 * xy + f1 * n1 + s2,
            (k1 + k2) * xy + t1 * xx + t2 * yy,
            2.0 * k2 * yy + 2.0 * t1 * xy + f2 * n2,
            k1 * xz + t2 * yz + d * xx,
            k2 * yz + t1 * xz + d * xy,
            2.0 * d * xz,
        ])

    return rhs


def stationary_means(params: SystemParams) -> tuple[float, float]:
    c = _coefficients(params)
    m = np.array([[c["k1"], c["t2"]], [c["t1"], c["k2"]]])
    n = np.linalg.solve(m, [-c["s1"], 0.0])
    return float(n[0]), float(n[1])


def stationary_second_moments(params: SystemParams, method: str = "solve",
                              rtol: float = DEFAULT_RTOL) -> tuple[float, float, float]:
    """Stationary (mu_XX, mu_XY, mu_YY).

    ``method="solve"`` solves the 3x3 linear system; ``method="preintegrate"``
    integrates from zero second moments (at stationary means) for 60 slow
    time constants and serves as a cross-check.
    """
    c = _coefficients(params)
    n1, n2 = stationary_means(params)
    if method == "solve":
        k1, k2, t1, t2 = c["k1"], c["k2"], c["t1"], c["t2"]
        m = np.array([
            [2.0 * k1, 2.0 * t2, 0.0],
            [t1, k1 + k2, t2],
            [0.0, 2.0 * t1, 2.0 * k2],
        ])
        rhs = -np.array([c["f1"] * n1 + c["s2"], 0.0, c["f2"] * n2])
        mu = np.linalg.solve(m, rhs)
        return float(mu[0]), float(mu[1]), float(mu[2])
    if method == "preintegrate":
        slow = float(np.min(np.abs(np.linalg.eigvals([[c["k1"], c["t2"]], [c["t1"], c["k2"]]]))))
        v0 = np.array([n1, n2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        st = _integrate(params, v0, 60.0 / slow, rtol, DEFAULT_MAX_EVALS, dense=False)
        end = st.y[:, -1]
        return float(end[3]), float(end[4]), float(end[5])
    raise ValueError(f"unknown method {method!r}")


def _initial_state(params: SystemParams, initial: str) -> np.ndarray:
    if initial == "stationary":
        n1, n2 = stationary_means(params)
        xx, xy, yy = stationary_second_moments(params)
        return np.array([n1, n2, 0.0, xx, xy, yy, 0.0, 0.0, 0.0])
    if initial == "empty":
        return np.zeros(len(STATE_NAMES))
    raise ValueError(f"unknown initial condition {initial!r}")


def _integrate(params, v0, t_end, rtol, max_evals, dense, t_eval=None):
    rhs = moment_rhs(params)
    calls = 0

    def counted(t, v):
        nonlocal calls
        calls += 1
        if calls > max_evals:
            raise StiffnessFailure(f"more than {max_evals} right-hand-side evaluations")
        return rhs(t, v)

    # detector moments start at zero and grow like t^2, so the absolute
    # tolerance sits far below any value of interest
    c = _coefficients(params)
    scale = max(float(np.max(np.abs(v0))), c["s1"] / abs(c["k1"]), 1e-300)
    sol = solve_ivp(counted, (0.0, float(t_end)), v0, method="DOP853", rtol=rtol,
                    atol=rtol * 1e-12 * scale, dense_output=dense, t_eval=t_eval)
    if not sol.success:
        raise ToleranceNotMet(sol.message)
    return sol


def integrate_moments(params: SystemParams, t_end: float, rtol: float = DEFAULT_RTOL,
                      initial: str = "stationary", max_evals: int = DEFAULT_MAX_EVALS) -> MomentState:
    """Integrate all nine moment equations from t=0 to ``t_end``.

    With ``initial="stationary"`` the population moments start at their
    stationary values and every detector moment starts at zero, i.e. the
    measurement opens at t=0 on a system that has been running forever.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    sol = _integrate(params, _initial_state(params, initial), t_end, rtol, max_evals, dense=False)
    return MomentState.from_vector(sol.t[-1], sol.y[:, -1])


def trajectory(params: SystemParams, times, rtol: float = DEFAULT_RTOL,
               initial: str = "stationary", max_evals: int = DEFAULT_MAX_EVALS) -> list[MomentState]:
    """Moment states at each of ``times`` from a single dense-output pass."""
    t = np.asarray(times, dtype=float)
    if t.size == 0 or np.any(t <= 0):
        raise ValueError("times must be positive")
    sol = _integrate(params, _initial_state(params, initial), float(t.max()), rtol, max_evals, dense=True)
    vals = sol.sol(t)
    return [MomentState.from_vector(ti, vals[:, i]) for i, ti in enumerate(t)]


def y_of_t_oracle(params: SystemParams, gates, rtol: float = DEFAULT_RTOL,
                  max_evals: int = DEFAULT_MAX_EVALS) -> FeynmanCurve:
    """Y(T) = mu_ZZ(T) / <Z(T)> by numerical integration."""
    states = trajectory(params, gates, rtol=rtol, max_evals=max_evals)
    return FeynmanCurve(np.asarray(gates, dtype=float), np.array([s.y_value for s in states]))


def trajectory_csv(states: list[MomentState]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t",) + STATE_NAMES)
    for s in states:
        w.writerow([repr(s.t)] + [repr(getattr(s, k)) for k in STATE_NAMES])
    return buf.getvalue()
