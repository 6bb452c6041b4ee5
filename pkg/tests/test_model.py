import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feynalpha.errors import ConfigError, InvalidParams
from feynalpha.model import (FIXTURE_NAMES, SystemParams, factorial_moments, fit_multiplicity_pmf,
                             load_fixture, validate)
from feynalpha.tables import TABLE1, build_fixture


def test_ddsi500_root_sum_and_product_from_table_values():
    # a = lambda1 - nu*lambdaF, b = lambda2, c = lambdaT1*lambdaT2
    a = 1.6715 - 2.80 * 0.2335
    b = 2.0527
    c = 1.2422 * 0.8105
    p = load_fixture("ddsi500")
    assert p.root_sum == pytest.approx(a + b, rel=1e-12)
    assert p.root_product == pytest.approx(a * b - c, rel=1e-12)
    assert p.root_product == pytest.approx(1.082, abs=5e-4)


def test_fixture_totals_reproduce_table1():
    for name in FIXTURE_NAMES:
        p = load_fixture(name)
        row = TABLE1[name]
        assert p.region2.total == pytest.approx(row["lambda2"], abs=1e-12)
        assert p.region1.transfer_out_intensity == row["lambdaT1"]
        assert p.region2.transfer_out_intensity == row["lambdaT2"]
        assert p.region1.fission_intensity == row["lambdaF"]
        if name.startswith("ddsi"):
            assert p.region1.total == pytest.approx(row["lambda1"], abs=1e-12)
        else:
            # capture remainder clamped at zero
            assert p.region1.capture_intensity == 0.0
            assert p.region1.total > row["lambda1"]


@pytest.mark.parametrize("name", FIXTURE_NAMES)
@pytest.mark.parametrize("sim", [False, True])
def test_bundled_json_matches_builder(name, sim):
    stored = load_fixture(name + ("_sim" if sim else ""))
    assert stored == build_fixture(name, simulation=sim)


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixtures_valid(name):
    assert validate(load_fixture(name)).valid
    assert validate(load_fixture(name + "_sim")).valid


def test_analytic_fixture_notes_infeasible_multiplicity():
    rep = validate(load_fixture("ddsi500"))
    assert any("negative variance" in n for n in rep.notes)


def test_json_round_trip_and_hash(fixtures):
    for p in fixtures.values():
        q = SystemParams.from_json(p.to_json())
        assert q == p
        assert q.params_hash() == p.params_hash()


def test_unknown_and_missing_keys_rejected(fixtures):
    d = fixtures["ddsi500"].to_dict()
    d["bogus"] = 1
    with pytest.raises(ConfigError):
        SystemParams.from_dict(d)
    d = fixtures["ddsi500"].to_dict()
    del d["region1"]["fission_intensity"]
    with pytest.raises(ConfigError):
        SystemParams.from_dict(d)
    with pytest.raises(ConfigError):
        SystemParams.from_json("[1, 2]")


def test_supercritical_is_rejected_naming_product(fixtures):
    d = fixtures["ddsi500"].to_dict()
    d["region1"]["fission_intensity"] = 5.0
    rep = validate(SystemParams.from_dict(d))
    assert not rep.valid
    assert any("root product" in v for v in rep.violations)
    with pytest.raises(InvalidParams):
        rep.raise_if_invalid()


def test_negative_intensity_and_bad_pmf_reported(fixtures):
    d = fixtures["ddsi500_sim"].to_dict()
    d["region2"]["capture_intensity"] = -1.0
    d["fission_pmf_1"] = [0.5, 0.6]
    rep = validate(SystemParams.from_dict(d))
    text = " ".join(rep.violations)
    assert "negative" in text and "sums to" in text


def test_pmf_fit_moments():
    pmf = fit_multiplicity_pmf(2.8, 4.635)
    # infeasible target: minimum-variance distribution on {2, 3}
    assert pmf == (0.0, 0.0, 0.2, 0.8)
    m1, m2 = factorial_moments(pmf)
    assert m1 == pytest.approx(2.8, abs=1e-12)
    assert m2 == pytest.approx(5.2, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.2, 3.6), st.floats(0.0, 1.0))
def test_pmf_fit_hits_feasible_targets(nu1, frac):
    # feasible second factorial moments on {1..4} lie between the
    # minimum-variance value and the extreme {1, 4} mixture
    lo_var = (nu1 - math.floor(nu1)) * (1 - (nu1 - math.floor(nu1)))
    p4 = (nu1 - 1) / 3
    hi_var = 9 * p4 * (1 - p4)
    var = lo_var + frac * (hi_var - lo_var)
    nu2 = var + nu1 * nu1 - nu1
    pmf = fit_multiplicity_pmf(nu1, nu2)
    assert min(pmf) >= 0
    assert sum(pmf) == pytest.approx(1.0, abs=1e-10)
    m1, m2 = factorial_moments(pmf)
    assert m1 == pytest.approx(nu1, abs=1e-9)
    assert m2 == pytest.approx(nu2, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 20.0))
def test_scaling_scales_roots(k):
    p = load_fixture("ddaa10")
    q = p.scaled(k)
    assert q.root_sum == pytest.approx(k * p.root_sum, rel=1e-12)
    assert q.root_product == pytest.approx(k * k * p.root_product, rel=1e-11)


def test_to_json_is_stable_text(fixtures):
    text = fixtures["ddaa500_sim"].to_json()
    assert text.endswith("\n")
    assert json.loads(text)["fission_pmf_1"] == [0.0, 0.0, 0.2, 0.8]
    assert np.isclose(fixtures["ddaa500_sim"].region1.induced_nu2, 5.2)
