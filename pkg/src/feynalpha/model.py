"""System parameters for the two-region branching model.

Region I holds the fissile sample, the source and the detector; region II
is the surrounding moderator. Neutrons move between the regions with
per-neutron transfer intensities ``lambda_T1`` (I -> II) and ``lambda_T2``
(II -> I). All intensities are in one consistent, otherwise arbitrary,
inverse-time unit.

Configuration files are JSON documents whose keys mirror the dataclass
field names below; unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, InvalidParams

PMF_MOMENT_RTOL = 1e-12

FIXTURE_NAMES = ("ddaa500", "ddaa10", "ddsi500", "ddsi10")


def _as_pmf(values) -> tuple[float, ...] | None:
    if values is None:
        return None
    return tuple(float(v) for v in values)


def factorial_moments(pmf: Sequence[float]) -> tuple[float, float]:
    """First two factorial moments ``E[n]`` and ``E[n(n-1)]`` of a PMF on 0, 1, 2, ..."""
    p = np.asarray(pmf, dtype=float)
    n = np.arange(p.size, dtype=float)
    return float(np.dot(n, p)), float(np.dot(n * (n - 1.0), p))


def _moment_close(computed: float, declared: float) -> bool:
    scale = max(abs(declared), abs(computed))
    if scale == 0.0:
        return True
    return abs(computed - declared) <= PMF_MOMENT_RTOL * scale


def fit_multiplicity_pmf(nu1: float, nu2: float, support: Sequence[int] = (1, 2, 3, 4)) -> tuple[float, ...]:
    """Nonnegative PMF on ``support`` with mean ``nu1`` and E[n(n-1)] closest to ``nu2``.

    The normalization and the mean are imposed exactly; the second factorial
    moment is matched as closely as the nonnegativity constraints allow. A
    target with ``nu2 + nu1 - nu1**2 < 0`` implies a negative variance and is
    unreachable; the minimum-variance distribution is then returned.

    Returns the PMF as a tuple indexed by multiplicity (entry ``n`` is P(n)).
    """
    k = np.asarray(support, dtype=float)
    m = k.size
    # variables: p (m entries), then slack d >= |second moment residual|
    c = np.zeros(m + 1)
    c[-1] = 1.0
    a_eq = np.zeros((2, m + 1))
    a_eq[0, :m] = 1.0
    a_eq[1, :m] = k
    b_eq = np.array([1.0, nu1])
    ff = k * (k - 1.0)
    a_ub = np.zeros((2, m + 1))
    a_ub[0, :m] = ff
    a_ub[0, -1] = -1.0
    a_ub[1, :m] = -ff
    a_ub[1, -1] = -1.0
    b_ub = np.array([nu2, -nu2])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0.0, None)] * (m + 1), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise ValueError(f"no nonnegative PMF on {tuple(support)} has mean {nu1}")
    p = np.where(res.x[:m] < 1e-14, 0.0, res.x[:m])
    # the solver meets the constraints only to its feasibility tolerance;
    # a minimum-norm correction on the support restores them to rounding
    live = p > 0
    exact_m2 = res.x[-1] <= 1e-7 * max(1.0, abs(nu2)) and live.sum() >= 3
    rows = [np.ones(m), k] + ([ff] if exact_m2 else [])
    a = np.array(rows)[:, live]
    target = np.array([1.0, nu1, nu2][:len(rows)])
    step = np.linalg.lstsq(a, target - a @ p[live], rcond=None)[0]
    fixed = p.copy()
    fixed[live] += step
    if np.all(fixed >= 0):
        p = fixed
    p = p / p.sum()
    out = np.zeros(int(k.max()) + 1)
    out[k.astype(int)] = np.round(p, 12)
    last = int(np.nonzero(out)[0].max())
    return tuple(float(v) for v in out[:last + 1])


@dataclass(frozen=True)
class RegionIParams:
    """Fuel region: capture, fission, transfer to region II, detection."""

    capture_intensity: float
    fission_intensity: float
    transfer_out_intensity: float
    detection_intensity: float
    induced_nu1: float
    induced_nu2: float

    @property
    def total(self) -> float:
        return (self.capture_intensity + self.fission_intensity
                + self.transfer_out_intensity + self.detection_intensity)


@dataclass(frozen=True)
class RegionIIParams:
    """Moderator region: capture, fission, transfer back to region I. No detector."""

    capture_intensity: float
    fission_intensity: float
    transfer_out_intensity: float
    induced_nu1: float
    induced_nu2: float

    @property
    def total(self) -> float:
        return self.capture_intensity + self.fission_intensity + self.transfer_out_intensity


@dataclass(frozen=True)
class SourceParams:
    """Compound Poisson source in region I."""

    strength: float
    emission_nu1: float
    emission_nu2: float
    emission_pmf: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "emission_pmf", _as_pmf(self.emission_pmf))


@dataclass(frozen=True)
class SystemParams:
    region1: RegionIParams
    region2: RegionIIParams
    source: SourceParams
    fission_pmf_1: tuple[float, ...] | None = None
    fission_pmf_2: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "fission_pmf_1", _as_pmf(self.fission_pmf_1))
        object.__setattr__(self, "fission_pmf_2", _as_pmf(self.fission_pmf_2))

    # Net removal rates of each region once fission regeneration is subtracted.
    @property
    def removal1(self) -> float:
        return self.region1.total - self.region1.induced_nu1 * self.region1.fission_intensity

    @property
    def removal2(self) -> float:
        return self.region2.total - self.region2.induced_nu1 * self.region2.fission_intensity

    @property
    def coupling(self) -> float:
        """Product of the two transfer intensities."""
        return self.region1.transfer_out_intensity * self.region2.transfer_out_intensity

    @property
    def root_sum(self) -> float:
        return self.removal1 + self.removal2

    @property
    def root_product(self) -> float:
        return self.removal1 * self.removal2 - self.coupling

    @property
    def has_pmfs(self) -> bool:
        return (self.fission_pmf_1 is not None and self.fission_pmf_2 is not None
                and self.source.emission_pmf is not None)

    def scaled(self, k: float) -> "SystemParams":
        """Multiply every intensity and the source strength by ``k``."""
        r1, r2 = self.region1, self.region2
        return replace(
            self,
            region1=replace(r1, capture_intensity=k * r1.capture_intensity,
                            fission_intensity=k * r1.fission_intensity,
                            transfer_out_intensity=k * r1.transfer_out_intensity,
                            detection_intensity=k * r1.detection_intensity),
            region2=replace(r2, capture_intensity=k * r2.capture_intensity,
                            fission_intensity=k * r2.fission_intensity,
                            transfer_out_intensity=k * r2.transfer_out_intensity),
            source=replace(self.source, strength=k * self.source.strength),
        )

    def with_source_strength(self, strength: float) -> "SystemParams":
        return replace(self, source=replace(self.source, strength=strength))

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        def plain(obj):
            return {f.name: (list(v) if isinstance(v := getattr(obj, f.name), tuple) else v)
                    for f in fields(obj)}
        return {
            "region1": plain(self.region1),
            "region2": plain(self.region2),
            "source": plain(self.source),
            "fission_pmf_1": None if self.fission_pmf_1 is None else list(self.fission_pmf_1),
            "fission_pmf_2": None if self.fission_pmf_2 is None else list(self.fission_pmf_2),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SystemParams":
        _check_keys("configuration", data, {f.name for f in fields(cls)},
                    required={"region1", "region2", "source"})
        try:
            region1 = RegionIParams(**_section(data, "region1", RegionIParams))
            region2 = RegionIIParams(**_section(data, "region2", RegionIIParams))
            source = SourceParams(**_section(data, "source", SourceParams))
            return cls(region1, region2, source,
                       fission_pmf_1=data.get("fission_pmf_1"),
                       fission_pmf_2=data.get("fission_pmf_2"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SystemParams":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        return cls.from_dict(data)

    def params_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _check_keys(where: str, data: dict, allowed: set[str], required: set[str] = frozenset()):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = set(required) - set(data)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


def _section(data: dict, name: str, cls) -> dict:
    sec = data[name]
    if not isinstance(sec, dict):
        raise ConfigError(f"{name} must be an object")
    required = {f.name for f in fields(cls) if f.name != "emission_pmf"}
    _check_keys(name, sec, {f.name for f in fields(cls)}, required)
    out = {}
    for key, value in sec.items():
        if key == "emission_pmf":
            out[key] = value
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}.{key} must be a number")
        else:
            out[key] = float(value)
    return out


def load_params(path: str | Path) -> SystemParams:
    return SystemParams.from_json(Path(path).read_text())


def load_fixture(name: str) -> SystemParams:
    """One of the bundled parameter sets, e.g. ``"ddsi500"`` or ``"ddsi500_sim"``."""
    text = resources.files("feynalpha.data").joinpath(f"{name}.json").read_text()
    return SystemParams.from_json(text)


def total_intensities(params: SystemParams) -> tuple[float, float]:
    """Total reaction intensities (lambda_1, lambda_2) of the two regions."""
    return params.region1.total, params.region2.total


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]
    root_sum: float
    root_product: float
    lambda1: float
    lambda2: float
    notes: tuple[str, ...] = field(default=())

    @property
    def valid(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise InvalidParams(self)

    def summary(self) -> str:
        head = "valid" if self.valid else "INVALID"
        lines = [f"{head}: root_sum={self.root_sum!r} root_product={self.root_product!r}"]
        lines += [f"  violation: {v}" for v in self.violations]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def validate(params: SystemParams) -> ValidationReport:
    """Check every invariant and collect the violations instead of raising."""
    bad: list[str] = []
    notes: list[str] = []
    r1, r2, src = params.region1, params.region2, params.source
    named = [
        ("region1.capture_intensity", r1.capture_intensity),
        ("region1.fission_intensity", r1.fission_intensity),
        ("region1.transfer_out_intensity", r1.transfer_out_intensity),
        ("region1.detection_intensity", r1.detection_intensity),
        ("region1.induced_nu1", r1.induced_nu1),
        ("region1.induced_nu2", r1.induced_nu2),
        ("region2.capture_intensity", r2.capture_intensity),
        ("region2.fission_intensity", r2.fission_intensity),
        ("region2.transfer_out_intensity", r2.transfer_out_intensity),
        ("region2.induced_nu1", r2.induced_nu1),
        ("region2.induced_nu2", r2.induced_nu2),
        ("source.strength", src.strength),
        ("source.emission_nu1", src.emission_nu1),
        ("source.emission_nu2", src.emission_nu2),
    ]
    for name, value in named:
        if not math.isfinite(value):
            bad.append(f"{name} is not finite")
        elif value < 0:
            bad.append(f"{name} = {value!r} is negative")
    lam1, lam2 = total_intensities(params)
    if not lam1 > 0:
        bad.append(f"total intensity lambda1 = {lam1!r} must be > 0")
    if not lam2 > 0:
        bad.append(f"total intensity lambda2 = {lam2!r} must be > 0")
    if src.strength > 0 and not src.emission_nu1 > 0:
        bad.append("source.emission_nu1 must be > 0 when source.strength > 0")

    pmfs = [
        ("source.emission_pmf", src.emission_pmf, src.emission_nu1, src.emission_nu2),
        ("fission_pmf_1", params.fission_pmf_1, r1.induced_nu1, r1.induced_nu2),
        ("fission_pmf_2", params.fission_pmf_2, r2.induced_nu1, r2.induced_nu2),
    ]
    for name, pmf, m1, m2 in pmfs:
        if pmf is None:
            continue
        p = np.asarray(pmf)
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            bad.append(f"{name} must be a nonempty list of nonnegative numbers")
            continue
        if abs(p.sum() - 1.0) > 1e-12:
            bad.append(f"{name} sums to {p.sum()!r}, not 1")
        c1, c2 = factorial_moments(p)
        if not _moment_close(c1, m1):
            bad.append(f"{name} first factorial moment {c1!r} != declared {m1!r}")
        if not _moment_close(c2, m2):
            bad.append(f"{name} second factorial moment {c2!r} != declared {m2!r}")

    rsum, rprod = params.root_sum, params.root_product
    if not (rprod > 0 and rsum > 0):
        bad.append(
            "not subcritical: need root product (lambda1 - nu1*lambda1f)(lambda2 - nu2*lambda2f)"
            f" - lambdaT1*lambdaT2 > 0 and root sum > 0; got product={rprod!r}, sum={rsum!r}")
    for name, nu1, nu2 in (("region1", r1.induced_nu1, r1.induced_nu2),
                           ("region2", r2.induced_nu1, r2.induced_nu2)):
        if nu2 + nu1 - nu1 * nu1 < 0:
            notes.append(f"{name} multiplicity moments imply negative variance; "
                         "no PMF can realize them")
    return ValidationReport(tuple(bad), rsum, rprod, lam1, lam2, tuple(notes))
