"""Empirical Feynman curves from detection trains, and intensities from event tallies."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .analytic import FeynmanCurve, stationary_state
from .errors import BalanceViolation, EmptyTrain, GateTooLong
from .model import SystemParams
from .simulator import DetectionRecord, TallyTable

MIN_CONFIDENT_GATES = 100
REPLICA_SPREAD_MIN = 8
_CHUNK = 1 << 20
BALANCE_RTOL = 1e-9

LEAKAGE_NOTE = "leakage (n_lost) folded into region II capture"
NORMALIZATION_NOTE = ("intensities are counts divided by time-integrated populations; "
                      "tables normalized per source neutron must supply integrals on the same basis")


@dataclass(frozen=True)
class GateStatistics:
    gate_width: float
    n_gates: int
    mean_count: float
    variance: float
    y_value: float
    stderr: float
    low_confidence: bool = False


def _moments_to_stats(T, n, s1, s2, s3, s4, n_independent) -> GateStatistics:
    """Y and its delta-method standard error from raw power sums of gate counts."""
    mean = s1 / n
    c2 = s2 / n - mean ** 2
    c3 = s3 / n - 3 * mean * s2 / n + 2 * mean ** 3
    c4 = s4 / n - 4 * mean * s3 / n + 6 * mean ** 2 * s2 / n - 3 * mean ** 4
    var = c2 * n / (n - 1)
    if mean <= 0:
        raise EmptyTrain(f"no detections in any gate of width {T}")
    y = var / mean - 1.0
    # Var(s^2) ~ (mu4 - sigma^4)/k, Var(mean) ~ sigma^2/k, Cov ~ mu3/k
    k = n_independent
    v_var = max(c4 - c2 * c2, 0.0) / k
    v_mean = c2 / k
    cov = c3 / k
    g1 = 1.0 / mean
    g2 = -var / mean ** 2
    v_y = g1 * g1 * v_var + g2 * g2 * v_mean + 2 * g1 * g2 * cov
    se = math.sqrt(max(v_y, 0.0))
    if se == 0.0:
        se = math.sqrt(2.0 / k)
    return GateStatistics(float(T), int(n), float(mean), float(var), float(y), float(se),
                          n_independent < MIN_CONFIDENT_GATES)


def _power_sums(counts: np.ndarray) -> tuple[float, float, float, float]:
    c = counts.astype(np.float64)
    c2 = c * c
    return float(c.sum()), float(c2.sum()), float((c2 * c).sum()), float((c2 * c2).sum())


def _nonoverlapping(times, T, start, n_gates):
    sums = np.zeros(4)
    for lo in range(0, n_gates, _CHUNK):
        hi = min(lo + _CHUNK, n_gates)
        edges = start + T * np.arange(lo, hi + 1, dtype=np.float64)
        idx = np.searchsorted(times, edges, side="left")
        sums += _power_sums(np.diff(idx))
    return sums


def _bunched(cum, base, k, n_bins):
    """Sliding gates of k base bins, stepped by one base bin, from cumulative counts."""
    sums = np.zeros(4)
    n = n_bins - k + 1
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        sums += _power_sums(cum[lo + k:hi + k] - cum[lo:hi])
    return sums, n


def feynman_from_train(times: Sequence[float], gate_widths: Sequence[float],
                       duration: float | None = None, mode: str = "non-overlapping",
                       start: float = 0.0, base_width: float | None = None) -> list[GateStatistics]:
    """Variance-to-mean statistics of a detection train for each gate width.

    The record spans ``[start, start + duration]``; gates that would run
    past its end are discarded. ``mode="non-overlapping"`` partitions the
    record into consecutive gates. ``mode="bunching"`` bins the train once at
    ``base_width`` (default: the smallest gate) and forms every gate width as
    a sliding sum of whole base bins from cumulative counts; gate widths are
    rounded to the nearest multiple of the base width, and widths that round
    to the same multiple are reported once.
    """
    t = np.asarray(times, dtype=np.float64)
    if t.size == 0:
        raise EmptyTrain("detection train is empty")
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("detection train must be sorted")
    if duration is None:
        duration = float(t[-1] - start)
    widths = np.asarray(gate_widths, dtype=float)
    out = []
    if mode == "non-overlapping":
        for T in widths:
            n = int(math.floor(duration / T * (1 + 1e-12)))
            if n < 2:
                raise GateTooLong(f"gate {T} leaves {n} gate(s) in a record of {duration}")
            sums = _nonoverlapping(t, T, start, n)
            out.append(_moments_to_stats(T, n, *sums, n_independent=n))
    elif mode == "bunching":
        base = float(base_width if base_width is not None else widths.min())
        n_bins = int(math.floor(duration / base * (1 + 1e-12)))
        edges = start + base * np.arange(n_bins + 1, dtype=np.float64)
        cum = np.searchsorted(t, edges, side="left").astype(np.int64)
        cum -= cum[0]
        ks = dict.fromkeys(max(1, int(round(T / base))) for T in widths)
        for k in ks:
            if n_bins // k < 2:
                raise GateTooLong(f"gate {k * base} leaves fewer than 2 gates in a record of {duration}")
            sums, n = _bunched(cum, base, k, n_bins)
            out.append(_moments_to_stats(k * base, n, *sums, n_independent=n_bins // k))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out


def curve_from_stats(stats: list[GateStatistics]) -> FeynmanCurve:
    return FeynmanCurve([s.gate_width for s in stats], [s.y_value for s in stats],
                        [s.stderr for s in stats])


@dataclass(frozen=True)
class EnsembleCurve:
    curve: FeynmanCurve
    per_replica: np.ndarray  # shape (replicas, gates)
    stderr_source: str


def feynman_from_records(records: list[DetectionRecord], gate_widths: Sequence[float],
                         mode: str = "non-overlapping") -> EnsembleCurve:
    """Replica-averaged Feynman curve.

    With at least eight replicas the standard error is the replica spread
    divided by sqrt(replicas); otherwise the per-replica asymptotic errors
    are combined.
    """
    per = []
    ses = []
    for rec in records:
        stats = feynman_from_train(rec.detection_times, gate_widths, duration=rec.t_record, mode=mode)
        per.append([s.y_value for s in stats])
        ses.append([s.stderr for s in stats])
        gates = [s.gate_width for s in stats]
    per = np.array(per)
    ses = np.array(ses)
    r = len(records)
    mean = per.mean(axis=0)
    if r >= REPLICA_SPREAD_MIN:
        se = per.std(axis=0, ddof=1) / math.sqrt(r)
        source = "replica-spread"
    else:
        se = np.sqrt((ses ** 2).sum(axis=0)) / r
        source = "asymptotic"
    return EnsembleCurve(FeynmanCurve(gates, mean, se), per, source)


# -- intensities from tallies ------------------------------------------------

@dataclass(frozen=True)
class IntensityEstimate:
    lambda1: float
    lambda2: float
    lambdaT1: float
    lambdaT2: float
    lambdaF: float
    sigma_lambda1: float
    sigma_lambda2: float
    sigma_lambdaT1: float
    sigma_lambdaT2: float
    sigma_lambdaF: float
    capture1: float = 0.0
    capture2: float = 0.0
    detection: float = 0.0
    fission2: float = 0.0
    sigma_capture1: float = 0.0
    sigma_capture2: float = 0.0
    sigma_detection: float = 0.0
    sigma_fission2: float = 0.0
    net_transfer: float = 0.0
    notes: tuple[str, ...] = ()

    def to_json(self) -> str:
        d = asdict(self)
        d["notes"] = list(self.notes)
        return json.dumps(d, indent=2) + "\n"


def check_balance(tallies: TallyTable, setup: str = "ddsi") -> None:
    """Raise BalanceViolation unless every neutron balance closes."""
    if setup not in ("ddsi", "ddaa"):
        raise ValueError("setup must be 'ddsi' or 'ddaa'")
    scale = max(abs(tallies.n_source_neutrons) + abs(tallies.n_fission_neutrons)
                + abs(tallies.n_transfer_1to2) + abs(tallies.n_transfer_2to1)
                + abs(tallies.initial_population_1) + abs(tallies.initial_population_2), 1.0)
    for name, res in (("total", tallies.total_residual()),
                      ("region I", tallies.region1_residual(setup)),
                      ("region II", tallies.region2_residual(setup))):
        if abs(res) > BALANCE_RTOL * scale:
            raise BalanceViolation(f"{name} neutron balance off by {res!r} ({setup})", residual=res)


def intensities_from_tallies(tallies: TallyTable, setup: str,
                             durations: tuple[float, float]) -> IntensityEstimate:
    """Per-neutron reaction intensities as counts over time-integrated populations.

    ``durations`` is (integral of N1 dt, integral of N2 dt) over the tallied
    window. Uncertainties are the Poisson-count errors sqrt(count)/integral.
    """
    check_balance(tallies, setup)
    i1, i2 = durations
    if not (i1 > 0 and i2 > 0):
        raise ValueError("time-integrated populations must be positive")

    def rate(count, integral):
        return count / integral, math.sqrt(max(count, 0.0)) / integral

    f, sf = rate(tallies.n_fission_events, i1)
    a1, sa1 = rate(tallies.n_capture_1, i1)
    t1, st1 = rate(tallies.n_transfer_1to2, i1)
    d, sd = rate(tallies.n_detected, i1)
    t2, st2 = rate(tallies.n_transfer_2to1, i2)
    a2, sa2 = rate(tallies.n_capture_2 + tallies.n_lost, i2)
    f2, sf2 = rate(tallies.n_fission_events_2, i2)
    l1, sl1 = rate(tallies.n_fission_events + tallies.n_capture_1 + tallies.n_transfer_1to2
                   + tallies.n_detected, i1)
    l2, sl2 = rate(tallies.n_transfer_2to1 + tallies.n_capture_2 + tallies.n_lost
                   + tallies.n_fission_events_2, i2)
    return IntensityEstimate(
        lambda1=l1, lambda2=l2, lambdaT1=t1, lambdaT2=t2, lambdaF=f,
        sigma_lambda1=sl1, sigma_lambda2=sl2, sigma_lambdaT1=st1, sigma_lambdaT2=st2,
        sigma_lambdaF=sf,
        capture1=a1, capture2=a2, detection=d, fission2=f2,
        sigma_capture1=sa1, sigma_capture2=sa2, sigma_detection=sd, sigma_fission2=sf2,
        net_transfer=tallies.n_transfer_1to2 - tallies.n_transfer_2to1,
        notes=(LEAKAGE_NOTE, NORMALIZATION_NOTE, f"setup={setup}"),
    )


def nu_eff_from_estimate(est: IntensityEstimate, nu1: float) -> float:
    return nu1 * est.lambdaF / (est.lambda1 + est.lambda2)


def expected_tallies(params: SystemParams) -> tuple[TallyTable, tuple[float, float]]:
    """Stationary expected tallies per source neutron, with matching population integrals.

    Mimics a transport-code weight balance normalized to one starting
    neutron: every count is its stationary rate divided by the source
    neutron rate ``S r1``.
    """
    st = stationary_state(params)
    r1, r2 = params.region1, params.region2
    inflow = params.source.strength * params.source.emission_nu1
    i1, i2 = st.mean_n1 / inflow, st.mean_n2 / inflow
    table = TallyTable(
        n_source_neutrons=1.0,
        n_fission_events=r1.fission_intensity * i1,
        n_fission_neutrons=r1.induced_nu1 * r1.fission_intensity * i1,
        n_capture_1=r1.capture_intensity * i1,
        n_capture_2=r2.capture_intensity * i2,
        n_transfer_1to2=r1.transfer_out_intensity * i1,
        n_transfer_2to1=r2.transfer_out_intensity * i2,
        n_detected=r1.detection_intensity * i1,
        n_fission_events_2=r2.fission_intensity * i2,
        n_fission_neutrons_2=r2.induced_nu1 * r2.fission_intensity * i2,
    )
    return table, (i1, i2)


def dieaway_histogram(records: list[DetectionRecord], bin_width: float, t_min: float = 0.0,
                      t_max: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pooled detection-rate histogram (bin centres, rate, Poisson stderr).

    Rates are detections per unit time per replica. Empty bins get the
    one-count error so that weighted fits stay defined.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if t_max is None:
        t_max = min(r.t_record for r in records)
    n = int(math.floor((t_max - t_min) / bin_width * (1 + 1e-12)))
    if n < 1:
        raise ValueError("histogram window holds no bins")
    edges = t_min + bin_width * np.arange(n + 1)
    counts = np.zeros(n)
    for r in records:
        counts += np.histogram(r.detection_times, bins=edges)[0]
    norm = bin_width * len(records)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return centres, counts / norm, np.sqrt(np.maximum(counts, 1.0)) / norm
