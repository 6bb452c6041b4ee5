"""Exact event-by-event simulation of the two-region branching process.

Each replica is a continuous-time Markov chain on (N1, N2, Z) sampled with
competing exponentials: total rate ``S + lambda1 N1 + lambda2 N2``, an
exponential waiting time, a categorical choice of reaction, and a
multiplicity draw for source emissions and fissions. The inner loop is
compiled with numba.

Random numbers come from ``PCG64DXSM`` generators seeded by
``SeedSequence(seed, spawn_key=(replica_index,))``, so every replica is
reproducible on its own and independent of how many siblings it has.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numba
import numpy as np

from .errors import PmfMissing, PopulationCapExceeded, ReplicaErrors
from .model import SystemParams

GENERATOR_ID = f"numpy.random.PCG64DXSM+SeedSequence(spawn_key=(replica,))/numpy-{np.__version__}"

DEFAULT_MAX_POPULATION = 1_000_000

# Event kinds, in the order their rates are laid out in the kernel.
SOURCE_EMISSION, CAPTURE1, FISSION1, TRANSFER1TO2, DETECTION, CAPTURE2, FISSION2, TRANSFER2TO1 = range(8)
EVENT_NAMES = ("SourceEmission", "Capture1", "Fission1", "Transfer1to2",
               "Detection", "Capture2", "Fission2", "Transfer2to1")

# tally vector slots filled by the kernel
_T_SRC_EVENTS, _T_SRC_NEUTRONS, _T_FIS1_NEUTRONS, _T_FIS2_NEUTRONS = 8, 9, 10, 11
_N_TALLY = 12


@dataclass(frozen=True)
class TallyTable:
    """Event counts over one recording window.

    Counts are integers for simulator output; ingested external tables may
    hold fractions normalized to one source neutron. ``initial_*`` and
    ``final_*`` are the populations at the window edges, which close the
    per-region neutron balance exactly.
    """

    n_source_neutrons: float
    n_fission_events: float
    n_fission_neutrons: float
    n_capture_1: float
    n_capture_2: float
    n_transfer_1to2: float
    n_transfer_2to1: float
    n_detected: float = 0
    n_lost: float = 0
    n_source_events: float = 0
    n_fission_events_2: float = 0
    n_fission_neutrons_2: float = 0
    initial_population_1: float = 0
    initial_population_2: float = 0
    final_population_1: float = 0
    final_population_2: float = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TallyTable":
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown tally fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def merge(self, other: "TallyTable") -> "TallyTable":
        return TallyTable(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                             for f in fields(self)})

    def normalized(self) -> dict:
        """Every count divided by the number of source neutrons."""
        n = self.n_source_neutrons
        return {k: (v / n if n else float("nan")) for k, v in self.to_dict().items()}

    # neutron balances; "ddsi" puts the source in region I, "ddaa" in region II
    def region1_residual(self, setup: str = "ddsi") -> float:
        src = self.n_source_neutrons if setup == "ddsi" else 0
        gain = self.initial_population_1 + src + self.n_fission_neutrons + self.n_transfer_2to1
        loss = (self.n_capture_1 + self.n_fission_events + self.n_transfer_1to2
                + self.n_detected + self.final_population_1)
        return gain - loss

    def region2_residual(self, setup: str = "ddsi") -> float:
        src = self.n_source_neutrons if setup == "ddaa" else 0
        gain = self.initial_population_2 + src + self.n_fission_neutrons_2 + self.n_transfer_1to2
        loss = (self.n_capture_2 + self.n_fission_events_2 + self.n_transfer_2to1
                + self.n_lost + self.final_population_2)
        return gain - loss

    def total_residual(self) -> float:
        gain = (self.n_source_neutrons + self.n_fission_neutrons + self.n_fission_neutrons_2
                + self.initial_population_1 + self.initial_population_2)
        loss = (self.n_fission_events + self.n_fission_events_2 + self.n_capture_1 + self.n_capture_2
                + self.n_lost + self.n_detected + self.final_population_1 + self.final_population_2)
        return gain - loss


@dataclass(frozen=True)
class SimConfig:
    params: SystemParams
    t_record: float
    t_warmup: float | None = None
    seed: int = 0
    max_population: int = DEFAULT_MAX_POPULATION
    replicas: int = 1
    # turn the source off when recording starts (die-away experiment)
    switch_off_source: bool = False

    def __post_init__(self):
        if self.t_warmup is not None and self.t_warmup < 0:
            raise ValueError("t_warmup must be >= 0")
        if not self.t_record > 0:
            raise ValueError("t_record must be > 0")
        if self.max_population <= 0:
            raise ValueError("max_population must be > 0")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def warmup(self) -> float:
        """Warmup time; defaults to 30 slow die-away times."""
        if self.t_warmup is not None:
            return self.t_warmup
        from .analytic import omega_roots
        return 30.0 / omega_roots(self.params).omega1


@dataclass(frozen=True)
class DetectionRecord:
    detection_times: np.ndarray
    tallies: TallyTable
    final_populations: tuple[int, int]
    population_time_averages: tuple[float, float]
    t_record: float
    replica_index: int = 0
    seed: int = 0
    generator_id: str = GENERATOR_ID
    initial_populations: tuple[int, int] = field(default=(0, 0))

    @property
    def population_integrals(self) -> tuple[float, float]:
        return (self.population_time_averages[0] * self.t_record,
                self.population_time_averages[1] * self.t_record)

    def write_train(self, path: str | Path, header: dict | None = None) -> None:
        """Newline-delimited decimal timestamps, full double precision.

        ``header`` entries are written first as ``# key=value`` lines.
        """
        Path(path).write_text(self.train_text(header))

    def train_text(self, header: dict | None = None) -> str:
        head = "".join(f"# {k}={v}\n" for k, v in (header or {}).items())
        return head + "".join(f"{t!r}\n" for t in self.detection_times.tolist())

    def metadata(self, params_hash: str = "") -> dict:
        return {
            "seed": self.seed,
            "replica_index": self.replica_index,
            "generator_id": self.generator_id,
            "t_record": self.t_record,
            "params_hash": params_hash,
            "n_detections": int(self.detection_times.size),
            "initial_populations": list(self.initial_populations),
            "final_populations": list(self.final_populations),
            "population_time_averages": list(self.population_time_averages),
        }


def read_train(path: str | Path) -> np.ndarray:
    return read_train_with_header(path)[0]


def read_train_with_header(path: str | Path) -> tuple[np.ndarray, dict[str, str]]:
    """Timestamps and ``# key=value`` header entries of a train file."""
    header: dict[str, str] = {}
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                header[key.strip()] = value.strip()
            continue
        values.append(float(line))
    return np.array(values, dtype=float), header


@numba.njit(cache=True, nogil=True)
def _draw(cdf, u):
    k = 0
    while k < cdf.size - 1 and u >= cdf[k]:
        k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _choose(u, src_rate, n1, n2, cap1, fis1, tr1, det, cap2, fis2):
    edge = src_rate
    if u < edge:
        return 0
    for kind, rate in ((1, cap1), (2, fis1), (3, tr1), (4, det)):
        edge += rate * n1
        if u < edge:
            return kind
    edge += cap2 * n2
    if u < edge:
        return 5
    edge += fis2 * n2
    if u < edge:
        return 6
    return 7


@numba.njit(cache=True, nogil=True)
def _kernel(rng, rates, cdf_src, cdf_f1, cdf_f2, t_warm, t_end, max_pop, switch_off):
    source, cap1, fis1, tr1, det, cap2, fis2, tr2 = (rates[0], rates[1], rates[2], rates[3],
                                                    rates[4], rates[5], rates[6], rates[7])
    lam1 = cap1 + fis1 + tr1 + det
    lam2 = cap2 + fis2 + tr2
    n1 = 0
    n2 = 0
    t = 0.0
    recording = t_warm <= 0.0
    init1 = 0
    init2 = 0
    src_rate = source
    if recording and switch_off:
        src_rate = 0.0
    tallies = np.zeros(12, dtype=np.int64)
    times = np.empty(1024, dtype=np.float64)
    n_det = 0
    int1 = 0.0
    int2 = 0.0
    status = 0
    while True:
        total = src_rate + lam1 * n1 + lam2 * n2
        horizon = t_end if recording else t_warm
        if total > 0.0:
            t_next = t + rng.exponential(1.0 / total)
        else:
            t_next = np.inf
        if t_next >= horizon:
            # memoryless: stop at the boundary and redraw from there
            if recording:
                int1 += n1 * (t_end - t)
                int2 += n2 * (t_end - t)
                break
            t = t_warm
            recording = True
            init1 = n1
            init2 = n2
            if switch_off:
                src_rate = 0.0
            continue
        if recording:
            int1 += n1 * (t_next - t)
            int2 += n2 * (t_next - t)
        t = t_next
        kind = _choose(rng.random() * total, src_rate, n1, n2, cap1, fis1, tr1, det, cap2, fis2)
        while (kind >= 5 and n2 == 0) or (1 <= kind <= 4 and n1 == 0):
            # rounding at a category edge; redraw the category only
            kind = _choose(rng.random() * total, src_rate, n1, n2, cap1, fis1, tr1, det, cap2, fis2)
        if kind == 0:
            m = _draw(cdf_src, rng.random())
            n1 += m
            if recording:
                tallies[8] += 1
                tallies[9] += m
        elif kind == 1:
            n1 -= 1
        elif kind == 2:
            m = _draw(cdf_f1, rng.random())
            n1 += m - 1
            if recording:
                tallies[10] += m
        elif kind == 3:
            n1 -= 1
            n2 += 1
        elif kind == 4:
            n1 -= 1
            if recording:
                if n_det == times.size:
                    grown = np.empty(2 * times.size, dtype=np.float64)
                    grown[:n_det] = times[:n_det]
                    times = grown
                times[n_det] = t - t_warm
                n_det += 1
        elif kind == 5:
            n2 -= 1
        elif kind == 6:
            m = _draw(cdf_f2, rng.random())
            n2 += m - 1
            if recording:
                tallies[11] += m
        else:
            n2 -= 1
            n1 += 1
        if recording:
            tallies[kind] += 1
        if n1 + n2 > max_pop:
            status = 1
            break
    return times[:n_det], tallies, n1, n2, init1, init2, int1, int2, status


def _cdf(pmf) -> np.ndarray:
    c = np.cumsum(np.asarray(pmf, dtype=np.float64))
    c[-1] = 1.0
    return c


def _rates(params: SystemParams) -> np.ndarray:
    r1, r2 = params.region1, params.region2
    return np.array([params.source.strength, r1.capture_intensity, r1.fission_intensity,
                     r1.transfer_out_intensity, r1.detection_intensity, r2.capture_intensity,
                     r2.fission_intensity, r2.transfer_out_intensity], dtype=np.float64)


def replica_generator(seed: int, replica_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replica_index,))
    return np.random.Generator(np.random.PCG64DXSM(ss))


def run_replica(config: SimConfig, replica_index: int = 0) -> DetectionRecord:
    """Simulate one replica: warm up from an empty system, then record."""
    params = config.params
    if not params.has_pmfs:
        raise PmfMissing("simulation requires emission_pmf, fission_pmf_1 and fission_pmf_2")
    rng = replica_generator(config.seed, replica_index)
    t_warm = float(config.warmup)
    out = _kernel(rng, _rates(params), _cdf(params.source.emission_pmf),
                  _cdf(params.fission_pmf_1), _cdf(params.fission_pmf_2),
                  t_warm, t_warm + float(config.t_record), int(config.max_population),
                  bool(config.switch_off_source))
    times, tv, n1, n2, i1, i2, int1, int2, status = out
    if status:
        raise PopulationCapExceeded(
            f"population exceeded {config.max_population} in replica {replica_index}")
    tallies = TallyTable(
        n_source_neutrons=int(tv[_T_SRC_NEUTRONS]),
        n_fission_events=int(tv[FISSION1]),
        n_fission_neutrons=int(tv[_T_FIS1_NEUTRONS]),
        n_capture_1=int(tv[CAPTURE1]),
        n_capture_2=int(tv[CAPTURE2]),
        n_transfer_1to2=int(tv[TRANSFER1TO2]),
        n_transfer_2to1=int(tv[TRANSFER2TO1]),
        n_detected=int(tv[DETECTION]),
        n_lost=0,
        n_source_events=int(tv[_T_SRC_EVENTS]),
        n_fission_events_2=int(tv[FISSION2]),
        n_fission_neutrons_2=int(tv[_T_FIS2_NEUTRONS]),
        initial_population_1=int(i1),
        initial_population_2=int(i2),
        final_population_1=int(n1),
        final_population_2=int(n2),
    )
    t_rec = float(config.t_record)
    return DetectionRecord(
        detection_times=np.asarray(times).copy(),
        tallies=tallies,
        final_populations=(int(n1), int(n2)),
        population_time_averages=(int1 / t_rec, int2 / t_rec),
        t_record=t_rec,
        replica_index=replica_index,
        seed=config.seed,
        initial_populations=(int(i1), int(i2)),
    )


def run_ensemble(config: SimConfig, workers: int = 1) -> list[DetectionRecord]:
    """Run ``config.replicas`` replicas; results are ordered by replica index."""
    indices = range(config.replicas)
    results: dict[int, DetectionRecord] = {}
    errors: dict[int, Exception] = {}

    def one(i):
        try:
            results[i] = run_replica(config, i)
        except Exception as exc:  # collected and re-raised with indices
            errors[i] = exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, indices))
    else:
        for i in indices:
            one(i)
    if errors:
        raise ReplicaErrors(errors)
    return [results[i] for i in indices]


def pooled_tallies(records: list[DetectionRecord]) -> TallyTable:
    total = records[0].tallies
    for r in records[1:]:
        total = total.merge(r.tallies)
    return total


def event_counts(tallies: TallyTable) -> dict[str, float]:
    """Counts per event kind, keyed by ``EVENT_NAMES``."""
    return {
        "SourceEmission": tallies.n_source_events,
        "Capture1": tallies.n_capture_1,
        "Fission1": tallies.n_fission_events,
        "Transfer1to2": tallies.n_transfer_1to2,
        "Detection": tallies.n_detected,
        "Capture2": tallies.n_capture_2,
        "Fission2": tallies.n_fission_events_2,
        "Transfer2to1": tallies.n_transfer_2to1,
    }
