"""Command-line interface: ``feynalpha <command> [options]``.

Commands
--------
analytic   closed-form Y(T) curve and amplitudes (canonical, published or both)
tables     nu_eff and decay-constant diagnostic for the bundled fixtures
simulate   event-by-event detection trains, tallies and a run manifest
estimate   Feynman statistics from trains, intensities from tallies, die-away histogram
fit        two-exponential fit of a curve CSV, or single-exponential die-away fit
compare    plateaus and curve orderings across several configurations
pipeline   analytic vs simulated vs fitted, with a pass/fail line per tolerance

File schemas
------------
config JSON   {"region1": {...}, "region2": {...}, "source": {...},
               "fission_pmf_1": [...] | null, "fission_pmf_2": [...] | null,
               "simulation": {"seed", "replicas", "t_record", "t_warmup",
                              "source_strength", "max_population"}  (optional)}
curve CSV     header gate_time,y_value[,stderr]; lines starting with '#' are comments
train file    one detection time per line; '# key=value' header lines
tallies JSON  {"pooled": TallyTable, "replicas": [TallyTable...],
               "population_integrals": [I1, I2], "run_id": ...}
              or a bare TallyTable object (then --population-integrals is required)
die-away CSV  header time,rate,stderr
manifest JSON command, arguments, config path and sha256, seed, version,
              generator id, UTC timestamps, run_id and sha256 of every output

Every output file carries the run_id of the manifest that produced it: a
'# run_id=...' line in text files, a "run_id" key in JSON files. The run_id
is the sha256 of the manifest's input fields, so outputs are byte-identical
across reruns with the same inputs.

Exit codes: 0 ok, 2 validation or precondition failure, 3 population cap,
4 data inconsistency (balance violation, manifest mismatch, failed fit).
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
from pathlib import Path

import numpy as np

from . import __version__
from . import analytic as an
from .errors import (BalanceViolation, ConfigError, DegenerateFit, EmptyTrain,
                     FeynmanAlphaError, GateTooLong, InvalidParams, NotConverged,
                     PmfMissing, PopulationCapExceeded, ReplicaErrors)
from .estimator import (check_balance, dieaway_histogram, feynman_from_records,
                        feynman_from_train, intensities_from_tallies)
from .fitting import fit_dieaway, fit_feynman, residuals_csv
from .model import FIXTURE_NAMES, SystemParams, load_fixture, validate
from .simulator import (GENERATOR_ID, DetectionRecord, SimConfig, TallyTable,
                        pooled_tallies, read_train_with_header, run_ensemble)
from .tables import TABLE2

EXIT_OK, EXIT_VALIDATION, EXIT_CAP, EXIT_DATA = 0, 2, 3, 4

DEFAULT_GATES = (0.1, 0.3, 1.0, 3.0, 10.0, 30.0)
SIM_KEYS = ("seed", "replicas", "t_record", "t_warmup", "source_strength", "max_population")


class DataInconsistency(FeynmanAlphaError):
    """Inputs disagree with each other (e.g. a manifest does not match its run)."""


# -- small helpers -------------------------------------------------------------

def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def atomic_write(path: str | Path, text: str) -> str:
    """Write via a temporary file in the same directory; returns the sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return sha256_bytes(data)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def gate_grid(args) -> np.ndarray:
    if getattr(args, "gates", None):
        g = np.array(sorted(parse_floats(args.gates)))
    else:
        g = np.geomspace(args.gate_min, args.gate_max, args.n_gates)
    if g.size == 0 or np.any(g <= 0):
        raise ConfigError("gate widths must be positive")
    return g


class Manifest:
    """Collects run inputs and output hashes; ``run_id`` depends on inputs only."""

    def __init__(self, command: str, arguments: dict, config_path: str | None,
                 config_sha256: str | None, seed: int | None, params_hash: str | None = None):
        self.started = datetime.now(timezone.utc).isoformat()
        self.inputs = {
            "command": command,
            "arguments": arguments,
            "config_path": config_path,
            "config_sha256": config_sha256,
            "params_hash": params_hash,
            "seed": seed,
            "version": __version__,
            "generator_id": GENERATOR_ID,
        }
        self.run_id = sha256_bytes(json.dumps(self.inputs, sort_keys=True).encode())
        self.outputs: dict[str, str] = {}

    def write(self, out_dir: Path, name: str, text: str) -> Path:
        path = out_dir / name
        self.outputs[name] = atomic_write(path, text)
        return path

    def finish(self, out_dir: Path) -> Path:
        doc = dict(self.inputs)
        doc.update(run_id=self.run_id, started_utc=self.started,
                   finished_utc=datetime.now(timezone.utc).isoformat(),
                   outputs=dict(sorted(self.outputs.items())))
        path = out_dir / "manifest.json"
        atomic_write(path, dump_json(doc))
        return path


def commented(text: str, run_id: str) -> str:
    return f"# run_id={run_id}\n" + text


# -- configuration -------------------------------------------------------------

def load_config(args) -> tuple[SystemParams, dict, str, str]:
    """(params, simulation block, config label, sha256 of the config bytes)."""
    if getattr(args, "config", None) and getattr(args, "fixture", None):
        raise ConfigError("give either --config or --fixture, not both")
    if getattr(args, "config", None):
        raw = Path(args.config).read_bytes()
        label = str(args.config)
    elif getattr(args, "fixture", None):
        raw = load_fixture(args.fixture).to_json().encode()
        label = f"fixture:{args.fixture}"
    else:
        raise ConfigError("a configuration is required (--config or --fixture)")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{label}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{label}: configuration must be a JSON object")
    sim = data.pop("simulation", None) or {}
    unknown = set(sim) - set(SIM_KEYS)
    if unknown:
        raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
    params = SystemParams.from_dict(data)
    report = validate(params)
    if not report.valid:
        raise InvalidParams(report)
    return params, sim, label, sha256_bytes(raw)


def simulation_settings(args, block: dict) -> dict:
    """Merge flags with the config's simulation block; a disagreement is an error."""
    defaults = {"seed": 0, "replicas": 16, "t_record": None, "t_warmup": None,
                "source_strength": None, "max_population": 1_000_000}
    out = {}
    for key in SIM_KEYS:
        flag = getattr(args, key, None)
        if flag is not None and key in block and block[key] != flag:
            raise ConfigError(f"--{key.replace('_', '-')}={flag} conflicts with "
                              f"simulation.{key}={block[key]} in the config file")
        out[key] = flag if flag is not None else block.get(key, defaults[key])
    if out["t_record"] is None:
        raise ConfigError("t_record is required (--t-record or simulation.t_record)")
    return out


def sim_config(params: SystemParams, settings: dict, switch_off: bool = False) -> SimConfig:
    if settings["source_strength"] is not None:
        params = params.with_source_strength(float(settings["source_strength"]))
    return SimConfig(params, t_record=float(settings["t_record"]),
                     t_warmup=None if settings["t_warmup"] is None else float(settings["t_warmup"]),
                     seed=int(settings["seed"]), max_population=int(settings["max_population"]),
                     replicas=int(settings["replicas"]), switch_off_source=switch_off)


# -- commands ------------------------------------------------------------------

def cmd_analytic(args) -> int:
    params, _, label, chash = load_config(args)
    gates = gate_grid(args)
    if not args.gates and not args.no_tail:
        # one far gate so the file's last row is the plateau to ~1e-6
        tail = 1e6 / an.omega_roots(params).omega1
        if tail > gates[-1]:
            gates = np.append(gates, tail)
    out = Path(args.out_dir)
    man = Manifest("analytic", {"mode": args.mode, "gates": gates.tolist()}, label, chash, None,
                   params.params_hash())
    om = an.omega_roots(params)
    st = an.stationary_state(params)
    amps = {"run_id": man.run_id, "mode": args.mode, "omega1": om.omega1, "omega2": om.omega2,
            "mean_n1": st.mean_n1, "mean_n2": st.mean_n2}
    if args.mode in ("canonical", "compare"):
        a = an.canonical_amplitudes(params)
        amps["canonical"] = {"y1_amp": a.y1_amp, "y2_amp": a.y2_amp, "y0": a.y0,
                             "plateau": a.plateau}
        man.write(out, "curve.csv", commented(an.feynman_curve_canonical(params, gates).to_csv(),
                                              man.run_id))
    if args.mode in ("paper", "compare"):
        curve, a = an.feynman_curve_paper(params, gates)
        amps["paper"] = {"y1_amp": a.y1_amp, "y2_amp": a.y2_amp, "y0": a.y0,
                         "plateau": a.plateau}
        name = "curve.csv" if args.mode == "paper" else "curve_paper.csv"
        man.write(out, name, commented(curve.to_csv(), man.run_id))
    if args.mode == "compare":
        cmp = an.compare_modes(params, gates, tolerance=args.tolerance)
        amps["comparison"] = {"agree": cmp.agree, "max_rel_deviation": cmp.max_rel_deviation,
                              "plateau_rel_deviation": cmp.plateau_rel_deviation,
                              "paper_sum_identity_deviation": cmp.paper_sum_identity_deviation,
                              "canonical_at_long_gate": cmp.canonical_at_long_gate}
        report = cmp.report()
        man.write(out, "comparison.txt", commented(report + "\n", man.run_id))
        print(report.split("gate_time")[0].rstrip())
    man.write(out, "amplitudes.json", dump_json(amps))
    man.finish(out)
    return EXIT_OK


def cmd_tables(args) -> int:
    out = Path(args.out_dir)
    man = Manifest("tables", {}, None, None, None)
    fixtures = {n: load_fixture(n) for n in FIXTURE_NAMES}
    rows = an.omega_table_diagnostic(fixtures, {n: (TABLE2[n]["omega1"], TABLE2[n]["omega2"])
                                                for n in FIXTURE_NAMES})
    text = an.format_omega_diagnostic(rows)
    man.write(out, "omega_diagnostic.csv", commented(text + "\n", man.run_id))
    nu = {n: {"nu_eff": an.nu_eff(p), "published": TABLE2[n]["nu_eff"]} for n, p in fixtures.items()}
    man.write(out, "nu_eff.json", dump_json({"run_id": man.run_id, "nu_eff": nu}))
    man.finish(out)
    print(text)
    for n, v in nu.items():
        print(f"nu_eff {n}: {v['nu_eff']:.5f} (published {v['published']})")
    return EXIT_OK


def _write_simulation(man: Manifest, out: Path, records: list[DetectionRecord],
                      config: SimConfig) -> dict:
    pooled = pooled_tallies(records)
    i1 = sum(r.population_integrals[0] for r in records)
    i2 = sum(r.population_integrals[1] for r in records)
    for r in records:
        header = {"run_id": man.run_id, "replica": r.replica_index, "seed": r.seed,
                  "t_record": repr(r.t_record), "generator_id": r.generator_id}
        man.write(out, f"train_{r.replica_index:04d}.txt", r.train_text(header))
    doc = {
        "run_id": man.run_id,
        "params_hash": config.params.params_hash(),
        "t_record": config.t_record,
        "t_warmup": config.warmup,
        "pooled": pooled.to_dict(),
        "population_integrals": [i1, i2],
        "replicas": [r.tallies.to_dict() for r in records],
        "population_time_averages": [list(r.population_time_averages) for r in records],
        "n_detections": [int(r.detection_times.size) for r in records],
    }
    man.write(out, "tallies.json", dump_json(doc))
    return doc


def cmd_simulate(args) -> int:
    params, block, label, chash = load_config(args)
    settings = simulation_settings(args, block)
    config = sim_config(params, settings, switch_off=args.switch_off_source)
    out = Path(args.out_dir)
    man = Manifest("simulate", {**settings, "switch_off_source": args.switch_off_source},
                   label, chash, int(settings["seed"]), config.params.params_hash())
    records = run_ensemble(config, workers=args.workers)
    doc = _write_simulation(man, out, records, config)
    man.finish(out)
    print(f"{len(records)} replica(s), {sum(doc['n_detections'])} detections -> {out}")
    return EXIT_OK


def _load_tallies(path: str, integrals: str | None) -> tuple[TallyTable, tuple[float, float], str | None]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: tally file must be a JSON object")
    run_id = data.get("run_id")
    if "pooled" in data:
        table = TallyTable.from_dict(data["pooled"])
        ints = data.get("population_integrals")
    else:
        table = TallyTable.from_dict({k: v for k, v in data.items() if k != "run_id"})
        ints = None
    if integrals is not None:
        if ints is not None:
            raise ConfigError("--population-integrals conflicts with population_integrals in the file")
        ints = parse_floats(integrals)
    if ints is None or len(ints) != 2:
        raise ConfigError("time-integrated populations are required (--population-integrals I1,I2)")
    return table, (float(ints[0]), float(ints[1])), run_id


def _gate_stats_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["train", "gate_width", "n_gates", "mean_count", "variance", "y_value", "stderr",
                "low_confidence"])
    for name, s in rows:
        w.writerow([name, repr(s.gate_width), s.n_gates, repr(s.mean_count), repr(s.variance),
                    repr(s.y_value), repr(s.stderr), int(s.low_confidence)])
    return buf.getvalue()


def _records_from_trains(paths: list[str], duration: float | None) -> list[DetectionRecord]:
    records = []
    for i, p in enumerate(paths):
        times, header = read_train_with_header(p)
        if duration is not None and "t_record" in header and float(header["t_record"]) != duration:
            raise ConfigError(f"--duration {duration} conflicts with t_record in {p}")
        t_rec = duration if duration is not None else float(header.get("t_record", "nan"))
        if not t_rec > 0:
            if times.size == 0:
                raise EmptyTrain(f"{p} is empty")
            t_rec = float(times[-1])
        records.append(DetectionRecord(times, TallyTable(0, 0, 0, 0, 0, 0, 0), (0, 0), (0.0, 0.0),
                                       t_rec, replica_index=i))
    return records


def cmd_estimate(args) -> int:
    out = Path(args.out_dir)
    if bool(args.trains) == bool(args.tallies):
        raise ConfigError("give either --trains or --tallies")
    if args.tallies:
        table, ints, src_run = _load_tallies(args.tallies, args.population_integrals)
        man = Manifest("estimate", {"tallies": args.tallies, "setup": args.setup,
                                    "integrals": list(ints)},
                       args.tallies, sha256_file(args.tallies), None)
        est = intensities_from_tallies(table, args.setup, ints)
        doc = json.loads(est.to_json())
        doc.update(run_id=man.run_id, source_run_id=src_run)
        man.write(out, "intensities.json", dump_json(doc))
        man.finish(out)
        print(est.to_json(), end="")
        return EXIT_OK

    records = _records_from_trains(args.trains, args.duration)
    digest = sha256_bytes("".join(sha256_file(p) for p in args.trains).encode())
    if args.dieaway:
        man = Manifest("estimate", {"trains": args.trains, "dieaway": True,
                                    "bin_width": args.bin_width, "t_min": args.t_min,
                                    "t_max": args.t_max}, None, digest, None)
        c, r, s = dieaway_histogram(records, args.bin_width, args.t_min, args.t_max)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "rate", "stderr"])
        for row in zip(c, r, s):
            w.writerow([repr(float(v)) for v in row])
        man.write(out, "dieaway.csv", commented(buf.getvalue(), man.run_id))
        man.finish(out)
        return EXIT_OK
    gates = gate_grid(args)
    man = Manifest("estimate", {"trains": args.trains, "gates": gates.tolist(), "mode": args.mode},
                   None, digest, None)
    rows = []
    for p, rec in zip(args.trains, records):
        for s in feynman_from_train(rec.detection_times, gates, duration=rec.t_record, mode=args.mode):
            rows.append((Path(p).name, s))
    man.write(out, "gate_statistics.csv", commented(_gate_stats_csv(rows), man.run_id))
    ens = feynman_from_records(records, gates, mode=args.mode)
    man.write(out, "curve.csv", commented(f"# stderr_source={ens.stderr_source}\n"
                                          + ens.curve.to_csv(), man.run_id))
    man.finish(out)
    print(ens.curve.to_csv(), end="")
    return EXIT_OK


def _read_dieaway(path: str):
    rows = [r for r in csv.reader(io.StringIO(Path(path).read_text())) if r and not r[0].startswith("#")]
    if not rows or [h.strip() for h in rows[0]] != ["time", "rate", "stderr"]:
        raise ConfigError(f"{path}: expected header time,rate,stderr")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 3)
    return data[:, 0], data[:, 1], data[:, 2]


def cmd_fit(args) -> int:
    out = Path(args.out_dir)
    man = Manifest("fit", {"curve": args.curve, "dieaway": args.dieaway,
                           "assumed_rel_stderr": args.assumed_rel_stderr}, args.curve,
                   sha256_file(args.curve), None)
    if args.dieaway:
        t, r, s = _read_dieaway(args.curve)
        try:
            f = fit_dieaway(t, r, s)
            code = EXIT_OK
        except NotConverged as exc:
            f, code = exc.best, EXIT_DATA
            print(f"fit did not converge: {exc}", file=sys.stderr)
        doc = {"run_id": man.run_id, "amplitude": f.amplitude, "omega": f.omega,
               "omega_stderr": f.omega_stderr, "background": f.background,
               "covariance": np.asarray(f.covariance).tolist(), "chi2_per_dof": f.chi2_per_dof,
               "converged": code == EXIT_OK, "diagnostics": f.diagnostics}
        man.write(out, "fit.json", dump_json(doc))
        man.finish(out)
        print(f"omega = {f.omega!r} +/- {f.omega_stderr!r}")
        return code
    try:
        curve = an.FeynmanCurve.read_csv(args.curve)
    except ValueError as exc:
        raise ConfigError(f"{args.curve}: {exc}") from exc
    if args.assumed_rel_stderr is not None:
        if curve.sigma is not None:
            raise ConfigError("--assumed-rel-stderr conflicts with the stderr column in the curve")
        curve = an.FeynmanCurve(curve.gate_times, curve.y, args.assumed_rel_stderr * np.abs(curve.y))
    code = EXIT_OK
    try:
        f = fit_feynman(curve)
    except DegenerateFit as exc:
        print(f"degenerate fit: {exc}", file=sys.stderr)
        f, code = exc.fit, EXIT_DATA
    doc = json.loads(f.to_json())
    doc["run_id"] = man.run_id
    if code:
        doc["degenerate"] = True
    man.write(out, "fit.json", dump_json(doc))
    man.write(out, "residuals.csv", commented(residuals_csv(curve, f), man.run_id))
    man.finish(out)
    print(f"omega1 = {f.omega1!r}  omega2 = {f.omega2!r}  chi2/dof = {f.chi2_per_dof:.4g}")
    return code


def _label_params(item: str) -> tuple[str, SystemParams]:
    if item in FIXTURE_NAMES or item.endswith("_sim"):
        return item, load_fixture(item)
    params = SystemParams.from_json(Path(item).read_text())
    validate(params).raise_if_invalid()
    return item, params


def ordering_report(items: list[tuple[str, SystemParams]], gates) -> dict:
    """Plateaus and pairwise pointwise orderings of canonical curves."""
    curves = {n: an.feynman_curve_canonical(p, gates).y for n, p in items}
    plateaus = {n: an.canonical_plateau(p) for n, p in items}
    pairs = []
    for i, (a, _) in enumerate(items):
        for b, _ in items[i + 1:]:
            pairs.append({"a": a, "b": b,
                          "plateau_a_higher": plateaus[a] > plateaus[b],
                          "a_ge_b_everywhere": bool(np.all(curves[a] >= curves[b])),
                          "b_ge_a_everywhere": bool(np.all(curves[b] >= curves[a]))})
    return {"plateaus": plateaus, "pairs": pairs, "gates": list(map(float, gates))}


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise ConfigError("compare needs at least two configurations")
    gates = gate_grid(args)
    items = [_label_params(s) for s in args.configs]
    rep = ordering_report(items, gates)
    out = Path(args.out_dir)
    man = Manifest("compare", {"configs": args.configs, "gates": gates.tolist()}, None,
                   sha256_bytes("".join(p.params_hash() for _, p in items).encode()), None)
    man.write(out, "compare.json", dump_json({"run_id": man.run_id, **rep}))
    man.finish(out)
    for n, v in rep["plateaus"].items():
        print(f"plateau {n}: {v!r}")
    for p in rep["pairs"]:
        rel = "higher" if p["plateau_a_higher"] else "lower"
        print(f"{p['a']} plateau {rel} than {p['b']}; "
              f"{p['a']} >= {p['b']} on all gates: {p['a_ge_b_everywhere']}")
    return EXIT_OK


# -- pipeline ------------------------------------------------------------------

def verify_manifest(path: str, seed: int, config_sha256: str) -> list[str]:
    """Problems found when checking a prior manifest against this run."""
    doc = json.loads(Path(path).read_text())
    problems = []
    if doc.get("seed") != seed:
        problems.append(f"seed mismatch: manifest {doc.get('seed')} vs run {seed}")
    if doc.get("config_sha256") != config_sha256:
        problems.append("config hash mismatch")
    base = Path(path).parent
    for name, digest in doc.get("outputs", {}).items():
        f = base / name
        if not f.exists():
            problems.append(f"missing output {name}")
        elif sha256_file(f) != digest:
            problems.append(f"output {name} changed since the manifest was written")
    return problems


def _z(a, b, s):
    return (a - b) / s if s > 0 else (0.0 if a == b else math.inf)


def run_pipeline(params: SystemParams, settings: dict, gates=DEFAULT_GATES,
                 fit_gates=None, compare_with=None, label="config") -> dict:
    """Simulate, estimate, fit and compare with the closed form.

    Returns a report dict with one entry per check; each check carries
    ``passed`` and the numbers behind it.
    """
    config = sim_config(params, settings)
    p = config.params
    records = run_ensemble(config)
    gates = np.asarray(gates, dtype=float)
    ens = feynman_from_records(records, gates)
    canon = an.feynman_curve_canonical(p, gates).y
    z = [(float(y), float(c), float(s), _z(y, c, s))
         for y, c, s in zip(ens.curve.y, canon, ens.curve.sigma)]
    checks = {}
    checks["curve_within_3_stderr"] = {
        "passed": all(abs(v[3]) <= 3 for v in z),
        "points": [{"gate": float(g), "empirical": v[0], "canonical": v[1], "stderr": v[2],
                    "z": v[3]} for g, v in zip(gates, z)]}

    st = an.stationary_state(p)
    avg = np.array([r.population_time_averages for r in records])
    pops = []
    for k, ref in enumerate((st.mean_n1, st.mean_n2)):
        mean = float(avg[:, k].mean())
        se = float(avg[:, k].std(ddof=1) / math.sqrt(len(records))) if len(records) > 1 else math.inf
        pops.append({"empirical": mean, "analytic": ref, "stderr": se, "z": _z(mean, ref, se)})
    checks["populations_within_3_sigma"] = {"passed": all(abs(q["z"]) <= 3 for q in pops),
                                            "regions": pops}

    pooled = pooled_tallies(records)
    check_balance(pooled, "ddsi")
    ints = (sum(r.population_integrals[0] for r in records),
            sum(r.population_integrals[1] for r in records))
    est = intensities_from_tallies(pooled, "ddsi", ints)
    r1, r2 = p.region1, p.region2
    pairs = {
        "lambda1": (est.lambda1, r1.total, est.sigma_lambda1),
        "lambda2": (est.lambda2, r2.total, est.sigma_lambda2),
        "lambdaT1": (est.lambdaT1, r1.transfer_out_intensity, est.sigma_lambdaT1),
        "lambdaT2": (est.lambdaT2, r2.transfer_out_intensity, est.sigma_lambdaT2),
        "lambdaF": (est.lambdaF, r1.fission_intensity, est.sigma_lambdaF),
        "capture1": (est.capture1, r1.capture_intensity, est.sigma_capture1),
        "capture2": (est.capture2, r2.capture_intensity, est.sigma_capture2),
        "detection": (est.detection, r1.detection_intensity, est.sigma_detection),
        "fission2": (est.fission2, r2.fission_intensity, est.sigma_fission2),
    }
    rt = {k: {"estimate": e, "configured": c, "sigma": s, "z": _z(e, c, s)}
          for k, (e, c, s) in pairs.items()}
    checks["intensities_within_3_sigma"] = {"passed": all(abs(v["z"]) <= 3 for v in rt.values()),
                                            "intensities": rt}

    om = an.omega_roots(p)
    if fit_gates is None:
        hi = min(50.0, config.t_record / 20.0)
        fit_gates = np.geomspace(0.02, hi, 30)
    fit_curve = feynman_from_records(records, fit_gates).curve
    fit_entry: dict = {"canonical_omega1": om.omega1, "canonical_omega2": om.omega2}
    try:
        f = fit_feynman(fit_curve)
        fit_entry["degenerate"] = False
    except DegenerateFit as exc:
        f = exc.fit
        fit_entry["degenerate"] = True
    se = f.stderr
    fit_entry.update(omega1=f.omega1, omega2=f.omega2, omega1_stderr=float(se[2]),
                     omega2_stderr=float(se[3]), y1_amp=f.y1_amp, y2_amp=f.y2_amp,
                     chi2_per_dof=f.chi2_per_dof, converged=f.converged,
                     component_unconstrained=f.component_unconstrained,
                     omega1_rel_error=f.omega1 / om.omega1 - 1.0,
                     omega2_rel_error=f.omega2 / om.omega2 - 1.0)
    fit_entry["omega1_passed"] = abs(fit_entry["omega1_rel_error"]) <= 0.05
    fit_entry["omega2_passed"] = abs(fit_entry["omega2_rel_error"]) <= 0.05
    fit_entry["passed"] = fit_entry["omega1_passed"] and fit_entry["omega2_passed"]
    checks["fit_omegas_within_5_percent"] = fit_entry

    report = {
        "label": label,
        "params_hash": p.params_hash(),
        "settings": settings,
        "n_detections": int(sum(r.detection_times.size for r in records)),
        "stderr_source": ens.stderr_source,
        "canonical_plateau": an.canonical_plateau(p),
        "checks": checks,
    }
    if compare_with is not None:
        other_label, other = compare_with
        rep = ordering_report([(label, params), (other_label, other)],
                              np.geomspace(1e-2, 1e2, 40))
        report["orderings"] = rep
    report["passed"] = all(c["passed"] for c in checks.values())
    return report


def format_pipeline(report: dict) -> str:
    lines = [f"pipeline {report['label']}: {report['n_detections']} detections, "
             f"stderr from {report['stderr_source']}"]
    c = report["checks"]
    for pt in c["curve_within_3_stderr"]["points"]:
        lines.append(f"  Y({pt['gate']:g}) = {pt['empirical']:.6f} +/- {pt['stderr']:.6f}  "
                     f"canonical {pt['canonical']:.6f}  z={pt['z']:+.2f}")
    for name, entry in c.items():
        lines.append(f"{'PASS' if entry['passed'] else 'FAIL'}  {name}")
    f = c["fit_omegas_within_5_percent"]
    lines.append(f"  fitted omega1 {f['omega1']:.5f} (canonical {f['canonical_omega1']:.5f}, "
                 f"{100 * f['omega1_rel_error']:+.2f}%)")
    lines.append(f"  fitted omega2 {f['omega2']:.5f} +/- {f['omega2_stderr']:.3g} (canonical "
                 f"{f['canonical_omega2']:.5f}, {100 * f['omega2_rel_error']:+.2f}%)")
    if "orderings" in report:
        for p in report["orderings"]["pairs"]:
            lines.append(f"  {p['a']} plateau {'higher' if p['plateau_a_higher'] else 'lower'} "
                         f"than {p['b']}")
    return "\n".join(lines)


def cmd_pipeline(args) -> int:
    params, block, label, chash = load_config(args)
    settings = simulation_settings(args, block)
    if args.verify_manifest:
        problems = verify_manifest(args.verify_manifest, int(settings["seed"]), chash)
        if problems:
            raise DataInconsistency("; ".join(problems))
    other = _label_params(args.compare_with) if args.compare_with else None
    out = Path(args.out_dir)
    man = Manifest("pipeline", {**settings, "compare_with": args.compare_with}, label, chash,
                   int(settings["seed"]), params.params_hash())
    report = run_pipeline(params, settings, compare_with=other, label=label)
    report["run_id"] = man.run_id
    text = format_pipeline(report)
    man.write(out, "report.json", dump_json(report))
    man.write(out, "report.txt", commented(text + "\n", man.run_id))
    man.finish(out)
    print(text)
    if args.strict and not report["passed"]:
        return EXIT_DATA
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def _add_config(p):
    p.add_argument("--config", help="parameter JSON file")
    p.add_argument("--fixture", choices=sorted(FIXTURE_NAMES + tuple(f"{n}_sim" for n in FIXTURE_NAMES)),
                   help="bundled parameter set instead of --config")


def _add_gates(p, default_min=1e-2, default_max=1e2, default_n=40):
    p.add_argument("--gates", help="comma-separated gate widths (overrides the grid)")
    p.add_argument("--gate-min", type=float, default=default_min)
    p.add_argument("--gate-max", type=float, default=default_max)
    p.add_argument("--n-gates", type=int, default=default_n)


def _add_sim(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--t-record", dest="t_record", type=float)
    p.add_argument("--t-warmup", dest="t_warmup", type=float)
    p.add_argument("--source-strength", dest="source_strength", type=float)
    p.add_argument("--max-population", dest="max_population", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feynalpha", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="closed-form Y(T)")
    _add_config(p)
    _add_gates(p)
    p.add_argument("--mode", choices=("canonical", "paper", "compare"), default="canonical",
                   help="canonical closed form, the published amplitudes, or both side by side")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--no-tail", action="store_true",
                   help="do not append the 1e6/omega1 plateau gate to the default grid")
    p.add_argument("--out-dir", default="out/analytic")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("tables", help="nu_eff and decay-constant diagnostic")
    p.add_argument("--out-dir", default="out/tables")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("simulate", help="event-by-event simulation")
    _add_config(p)
    _add_sim(p)
    p.add_argument("--switch-off-source", action="store_true",
                   help="turn the source off when recording starts (die-away run)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="out/simulate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="Feynman statistics or intensities")
    p.add_argument("--trains", nargs="+", help="train files")
    p.add_argument("--tallies", help="tallies JSON")
    p.add_argument("--population-integrals", help="I1,I2 for a bare tally table")
    p.add_argument("--setup", choices=("ddsi", "ddaa"), default="ddsi",
                   help="region holding the external source in the neutron balance")
    p.add_argument("--mode", choices=("non-overlapping", "bunching"), default="non-overlapping")
    p.add_argument("--duration", type=float, help="record length when trains carry no t_record")
    p.add_argument("--dieaway", action="store_true", help="write a detection-rate histogram")
    p.add_argument("--bin-width", type=float, default=0.25)
    p.add_argument("--t-min", type=float, default=0.0)
    p.add_argument("--t-max", type=float)
    _add_gates(p)
    p.set_defaults(gates=",".join(map(str, DEFAULT_GATES)))
    p.add_argument("--out-dir", default="out/estimate")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", help="fit a curve or die-away histogram")
    p.add_argument("--curve", required=True, help="curve CSV (or die-away CSV with --dieaway)")
    p.add_argument("--dieaway", action="store_true")
    p.add_argument("--assumed-rel-stderr", type=float,
                   help="stderr as a fraction of |y| for curves without a stderr column")
    p.add_argument("--out-dir", default="out/fit")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="plateaus and orderings across configurations")
    p.add_argument("--configs", nargs="+", required=True, help="fixture names or JSON paths")
    _add_gates(p)
    p.add_argument("--out-dir", default="out/compare")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pipeline", help="analytic vs simulated vs fitted")
    _add_config(p)
    _add_sim(p)
    p.add_argument("--compare-with", help="fixture name or JSON path for the ordering check")
    p.add_argument("--verify-manifest", help="prior manifest whose seed and config must match")
    p.add_argument("--strict", action="store_true", help="exit 4 when any check fails")
    p.add_argument("--out-dir", default="out/pipeline")
    p.set_defaults(func=cmd_pipeline)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PopulationCapExceeded):
        return EXIT_CAP
    if isinstance(exc, ReplicaErrors):
        return max(exit_code_for(e) for e in exc.errors.values())
    if isinstance(exc, (BalanceViolation, DataInconsistency, NotConverged, DegenerateFit)):
        return EXIT_DATA
    return EXIT_VALIDATION


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidParams as exc:
        print(exc.report.summary(), file=sys.stderr)
        return EXIT_VALIDATION
    except (FeynmanAlphaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
