"""Published reaction intensities and derived quantities for four spent-fuel setups.

``TABLE1`` holds the tabulated intensities (lambda_1, lambda_2, lambda_T1,
lambda_T2, lambda_f) for the DDAA and DDSI configurations with a 500 cm and a
10 cm moderator. ``TABLE2`` holds the published nu_eff and decay constants.
The bundled JSON fixtures are built from ``TABLE1`` by ``build_fixture``.
"""

from __future__ import annotations

from .model import (RegionIIParams, RegionIParams, SourceParams, SystemParams,
                    factorial_moments, fit_multiplicity_pmf)

TABLE1 = {
    "ddaa500": {"lambda1": 0.7648, "lambda2": 1.5641, "lambdaT1": 0.5641, "lambdaT2": 0.4535, "lambdaF": 0.1084},
    "ddaa10": {"lambda1": 0.7441, "lambda2": 1.5502, "lambdaT1": 0.5501, "lambdaT2": 1.0185, "lambdaF": 0.1049},
    "ddsi500": {"lambda1": 1.6715, "lambda2": 2.0527, "lambdaT1": 1.2422, "lambdaT2": 0.8105, "lambdaF": 0.2335},
    "ddsi10": {"lambda1": 1.6665, "lambda2": 2.0453, "lambdaT1": 1.2406, "lambdaT2": 1.2588, "lambdaF": 0.2317},
}

TABLE2 = {
    "ddaa500": {"nu_eff": 0.162, "omega1": 0.6318, "omega2": 1.3837},
    "ddaa10": {"nu_eff": 0.159, "omega1": 0.5299, "omega2": 1.4614},
    "ddsi500": {"nu_eff": 0.176, "omega1": 0.9578, "omega2": 2.0916},
    "ddsi10": {"nu_eff": 0.175, "omega1": 0.8360, "omega2": 2.1987},
}

NU1 = 2.80
NU2 = 4.635
DETECTION_INTENSITY = 0.1
SOURCE_NU1 = 1.0
SOURCE_NU2 = 0.0
SOURCE_STRENGTH = 1.0

# Support for the simulator's fitted fission multiplicity distribution.
PMF_SUPPORT = (1, 2, 3, 4)


def build_fixture(name: str, simulation: bool = False) -> SystemParams:
    """Parameter set for one Table 1 column.

    The capture intensity of each region is the remainder of the total after
    fission, transfer and (region I) detection. Where that remainder is
    negative (both DDAA columns) it is set to zero, so lambda_1 comes out
    slightly above the tabulated value.

    With ``simulation=True`` explicit PMFs are attached. The tabulated
    nu1=2.80, nu2=4.635 pair has no realizable distribution, so the fission
    PMF is the nonnegative fit on ``PMF_SUPPORT`` and nu2 is replaced by that
    PMF's own second factorial moment.
    """
    row = TABLE1[name]
    lam_f, lam_t1, lam_t2 = row["lambdaF"], row["lambdaT1"], row["lambdaT2"]
    capture1 = max(0.0, round(row["lambda1"] - lam_f - lam_t1 - DETECTION_INTENSITY, 12))
    capture2 = max(0.0, round(row["lambda2"] - lam_t2, 12))
    nu1, nu2 = NU1, NU2
    pmf1 = pmf2 = src_pmf = None
    if simulation:
        pmf1 = fit_multiplicity_pmf(NU1, NU2, PMF_SUPPORT)
        nu1, nu2 = (round(v, 12) for v in factorial_moments(pmf1))
        pmf2 = (1.0,)  # no fission in region II; any PMF with zero moments
        src_pmf = (0.0, 1.0)
    return SystemParams(
        RegionIParams(capture_intensity=capture1, fission_intensity=lam_f,
                      transfer_out_intensity=lam_t1, detection_intensity=DETECTION_INTENSITY,
                      induced_nu1=nu1, induced_nu2=nu2),
        RegionIIParams(capture_intensity=capture2, fission_intensity=0.0,
                       transfer_out_intensity=lam_t2, induced_nu1=0.0, induced_nu2=0.0),
        SourceParams(strength=SOURCE_STRENGTH, emission_nu1=SOURCE_NU1,
                     emission_nu2=SOURCE_NU2, emission_pmf=src_pmf),
        fission_pmf_1=pmf1,
        fission_pmf_2=pmf2,
    )
