import json

import numpy as np
import pytest

from feynalpha import analytic as an
from feynalpha.cli import build_parser, main, sha256_file
from feynalpha.model import load_fixture


def read_json(path):
    return json.loads(path.read_text())


def test_analytic_default_grid_tail_is_plateau(tmp_path):
    assert main(["analytic", "--fixture", "ddsi500", "--out-dir", str(tmp_path)]) == 0
    curve = an.FeynmanCurve.read_csv(tmp_path / "curve.csv")
    amps = read_json(tmp_path / "amplitudes.json")
    y0 = amps["canonical"]["y0"]
    assert abs(curve.y[-1] - y0) / y0 < 1e-6
    man = read_json(tmp_path / "manifest.json")
    for name, digest in man["outputs"].items():
        assert sha256_file(tmp_path / name) == digest
        assert man["run_id"] in (tmp_path / name).read_text()


def test_analytic_compare_mode(tmp_path):
    assert main(["analytic", "--fixture", "ddaa500", "--mode", "compare", "--out-dir", str(tmp_path)]) == 0
    doc = read_json(tmp_path / "amplitudes.json")
    assert doc["comparison"]["agree"] is False
    assert doc["comparison"]["max_rel_deviation"] > 0
    assert "max pointwise rel deviation" in (tmp_path / "comparison.txt").read_text()
    assert (tmp_path / "curve_paper.csv").exists()


def test_supercritical_exit_two(tmp_path, capsys):
    d = load_fixture("ddsi500").to_dict()
    d["region1"]["fission_intensity"] = 5.0
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(d))
    assert main(["analytic", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert "root product" in capsys.readouterr().err


def test_unknown_config_key_exit_two(tmp_path):
    d = load_fixture("ddsi500").to_dict()
    d["typo"] = 1
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(d))
    assert main(["analytic", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2


SIM = ["--fixture", "ddsi500_sim", "--seed", "11", "--replicas", "2", "--t-record", "2000"]


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", *SIM, "--out-dir", str(a)]) == 0
    assert main(["simulate", *SIM, "--out-dir", str(b)]) == 0
    ma, mb = read_json(a / "manifest.json"), read_json(b / "manifest.json")
    assert ma["outputs"] == mb["outputs"]
    assert ma["seed"] == 11 and ma["run_id"] == mb["run_id"]
    assert len([k for k in ma["outputs"] if k.startswith("train_")]) == 2
    for name in ma["outputs"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_cap_exit_three(tmp_path):
    assert main(["simulate", *SIM, "--max-population", "2", "--out-dir", str(tmp_path)]) == 3


def test_simulation_block_conflict(tmp_path):
    d = load_fixture("ddsi500_sim").to_dict()
    d["simulation"] = {"seed": 3, "t_record": 500.0, "replicas": 1}
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(d))
    assert main(["simulate", "--config", str(cfg), "--seed", "4", "--out-dir", str(tmp_path / "x")]) == 2
    assert main(["simulate", "--config", str(cfg), "--seed", "3", "--out-dir", str(tmp_path / "y")]) == 0
    assert read_json(tmp_path / "y" / "manifest.json")["seed"] == 3


def test_simulate_estimate_chain(tmp_path):
    sim, est = tmp_path / "s", tmp_path / "e"
    assert main(["simulate", *SIM, "--out-dir", str(sim)]) == 0
    trains = sorted(str(p) for p in sim.glob("train_*.txt"))
    assert main(["estimate", "--trains", *trains, "--out-dir", str(est)]) == 0
    curve = an.FeynmanCurve.read_csv(est / "curve.csv")
    assert len(curve) == 6 and curve.sigma is not None
    assert main(["estimate", "--tallies", str(sim / "tallies.json"), "--out-dir", str(est)]) == 0
    doc = read_json(est / "intensities.json")
    p = load_fixture("ddsi500_sim")
    assert abs(doc["lambdaF"] - p.region1.fission_intensity) < 4 * doc["sigma_lambdaF"]
    assert doc["source_run_id"] == read_json(sim / "manifest.json")["run_id"]


def test_malformed_tallies_exit_four(tmp_path):
    bad = tmp_path / "t.json"
    bad.write_text(json.dumps({"n_source_neutrons": 1, "n_fission_events": 0.2, "n_fission_neutrons": 0.5,
                               "n_capture_1": 0.3, "n_capture_2": 0.3, "n_transfer_1to2": 0.5,
                               "n_transfer_2to1": 0.2}))
    assert main(["estimate", "--tallies", str(bad), "--population-integrals", "1,1",
                 "--out-dir", str(tmp_path / "o")]) == 4


def test_fit_noise_free_and_single_point(tmp_path):
    a = tmp_path / "a"
    main(["analytic", "--fixture", "ddsi500", "--no-tail", "--out-dir", str(a)])
    assert main(["fit", "--curve", str(a / "curve.csv"), "--assumed-rel-stderr", "1e-3",
                 "--out-dir", str(tmp_path / "f")]) == 0
    doc = read_json(tmp_path / "f" / "fit.json")
    om = an.omega_roots(load_fixture("ddsi500"))
    assert doc["omega1"] == pytest.approx(om.omega1, rel=1e-3)
    assert doc["omega2"] == pytest.approx(om.omega2, rel=1e-3)
    one = tmp_path / "one.csv"
    one.write_text("gate_time,y_value,stderr\n1.0,0.1,0.01\n")
    assert main(["fit", "--curve", str(one), "--out-dir", str(tmp_path / "g")]) == 2


def test_fit_dieaway_csv(tmp_path):
    t = np.linspace(0, 10, 41)
    rows = "".join(f"{float(x)!r},{float(5 * np.exp(-0.6318 * x))!r},0.01\n" for x in t)
    path = tmp_path / "d.csv"
    path.write_text("time,rate,stderr\n" + rows)
    assert main(["fit", "--dieaway", "--curve", str(path), "--out-dir", str(tmp_path / "f")]) == 0
    assert read_json(tmp_path / "f" / "fit.json")["omega"] == pytest.approx(0.6318, abs=1e-6)


def test_compare_orderings(tmp_path, capsys):
    assert main(["compare", "--configs", "ddaa500", "ddsi500", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "ddaa500 plateau higher than ddsi500" in out


def test_pipeline_and_manifest_verification(tmp_path):
    sim = tmp_path / "s"
    main(["simulate", *SIM, "--out-dir", str(sim)])
    args = ["pipeline", "--fixture", "ddsi500_sim", "--replicas", "2", "--t-record", "2000"]
    assert main([*args, "--seed", "12", "--verify-manifest", str(sim / "manifest.json"),
                 "--out-dir", str(tmp_path / "p0")]) == 4
    assert main([*args, "--seed", "11", "--verify-manifest", str(sim / "manifest.json"),
                 "--out-dir", str(tmp_path / "p1")]) == 0
    rep = read_json(tmp_path / "p1" / "report.json")
    assert set(rep["checks"]) == {"curve_within_3_stderr", "populations_within_3_sigma",
                                  "intensities_within_3_sigma", "fit_omegas_within_5_percent"}
    # tampering with an output is caught too
    train = sim / "train_0000.txt"
    train.write_text(train.read_text() + "1e9\n")
    assert main([*args, "--seed", "11", "--verify-manifest", str(sim / "manifest.json"),
                 "--out-dir", str(tmp_path / "p2")]) == 4


def test_help_documents_schemas(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    for word in ("curve CSV", "tallies JSON", "manifest JSON", "Exit codes"):
        assert word in out
