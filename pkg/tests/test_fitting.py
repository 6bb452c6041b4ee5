import json

import numpy as np
import pytest

from feynalpha import analytic as an
from feynalpha.errors import DegenerateFit, NotConverged
from feynalpha.estimator import dieaway_histogram
from feynalpha.fitting import FeynmanFit, fit_dieaway, fit_feynman, residuals_csv
from feynalpha.model import FIXTURE_NAMES, load_fixture
from feynalpha.simulator import SimConfig, run_ensemble

GATES = np.geomspace(1e-2, 1e2, 40)


def noise_free(name, scale=1.0):
    p = load_fixture(name)
    y = an.feynman_curve_canonical(p, GATES).y
    return an.FeynmanCurve(GATES * scale, y, 1e-3 * y), p


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_noise_free_recovery(name):
    curve, p = noise_free(name)
    f = fit_feynman(curve)
    amps, om = an.canonical_amplitudes(p), an.omega_roots(p)
    truth = np.array([amps.y1_amp, amps.y2_amp, om.omega1, om.omega2])
    assert np.max(np.abs(f.params / truth - 1)) < 1e-3
    assert f.converged
    assert f.omega1 <= f.omega2
    assert f.chi2_per_dof >= 0


def test_refit_is_fixed_point():
    curve, _ = noise_free("ddaa500")
    f = fit_feynman(curve)
    g = fit_feynman(curve, init=f)
    assert np.max(np.abs(g.params / f.params - 1)) < 1e-10


@pytest.mark.parametrize("k", [0.1, 3.0, 40.0])
def test_time_rescaling_equivariance(k):
    curve, _ = noise_free("ddsi10")
    f = fit_feynman(curve)
    g = fit_feynman(an.FeynmanCurve(curve.gate_times * k, curve.y, curve.sigma))
    np.testing.assert_allclose([g.y1_amp, g.y2_amp], [f.y1_amp, f.y2_amp], rtol=1e-8)
    np.testing.assert_allclose([g.omega1 * k, g.omega2 * k], [f.omega1, f.omega2], rtol=1e-8)


def test_covariance_symmetric_psd():
    curve, _ = noise_free("ddsi500")
    cov = fit_feynman(curve).covariance
    assert np.array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() >= -1e-12 * np.abs(cov).max()


def test_single_exponential_truth_flagged():
    y = an.two_exponential_curve(0.4, 0.0, 0.5, 3.0, GATES)
    try:
        f = fit_feynman(an.FeynmanCurve(GATES, y, 1e-3 * y))
    except DegenerateFit as exc:
        assert exc.fit is not None
    else:
        assert f.component_unconstrained


def test_close_roots_raise_degenerate():
    y = an.two_exponential_curve(0.2, 0.2, 1.0, 1.05, GATES)
    with pytest.raises(DegenerateFit) as info:
        fit_feynman(an.FeynmanCurve(GATES, y, 1e-6 * y))
    assert "single-exponential" in str(info.value)


def test_preconditions():
    g = GATES[:5]
    with pytest.raises(ValueError):
        fit_feynman(an.FeynmanCurve(g, g, g))
    with pytest.raises(ValueError):
        fit_feynman(an.FeynmanCurve(GATES, GATES))
    narrow = np.linspace(1.0, 5.0, 10)
    with pytest.raises(ValueError):
        fit_feynman(an.FeynmanCurve(narrow, narrow, narrow))


def test_report_and_residuals():
    curve, _ = noise_free("ddsi500")
    f = fit_feynman(curve)
    doc = json.loads(f.to_json())
    for key in ("y1_amp", "y2_amp", "omega1", "omega2", "covariance", "chi2_per_dof",
                "converged", "n_iterations"):
        assert key in doc
    lines = residuals_csv(curve, f).strip().split("\n")
    assert lines[0] == "gate_time,y_value,model,residual,normalized_residual"
    assert len(lines) == len(GATES) + 1


def test_dieaway_exact_synthetic():
    t = np.linspace(0.0, 10.0, 41)
    f = fit_dieaway(t, 5.0 * np.exp(-0.6318 * t), np.full_like(t, 0.01))
    assert abs(f.omega - 0.6318) < 1e-6
    assert f.omega > 0


def test_dieaway_constant_not_identifiable():
    t = np.linspace(0.0, 10.0, 41)
    with pytest.raises(NotConverged) as info:
        fit_dieaway(t, np.full_like(t, 3.0), np.full_like(t, 0.1))
    assert "not identifiable" in str(info.value)
    assert info.value.best is not None


def test_dieaway_preconditions():
    with pytest.raises(ValueError):
        fit_dieaway([0, 1, 2, 3], [4, 3, 2, 1], [1, 1, 1, 1])
    with pytest.raises(ValueError):
        fit_dieaway(np.arange(6.0), np.ones(6), np.zeros(6))


def test_switch_off_decay_matches_slow_root():
    p = load_fixture("ddsi500_sim").with_source_strength(1000.0)
    recs = run_ensemble(SimConfig(p, t_record=20.0, seed=4242, replicas=32, switch_off_source=True))
    # skip the first two time units so the fast mode has died out
    c, r, s = dieaway_histogram(recs, 0.25, 2.0, 15.0)
    f = fit_dieaway(c, r, s)
    w1 = an.omega_roots(p).omega1
    assert abs(f.omega - w1) <= 3 * f.omega_stderr


def test_fit_dataclass_predict():
    f = FeynmanFit(0.3, 0.1, 0.5, 2.0, np.eye(4), 1.0, True, 3)
    np.testing.assert_allclose(f.predict(GATES), an.two_exponential_curve(0.3, 0.1, 0.5, 2.0, GATES))
