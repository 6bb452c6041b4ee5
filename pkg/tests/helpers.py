from dataclasses import replace

from feynalpha.model import load_fixture


def poisson_params(rate_source=5.0):
    """Source into region I, no fission, no coupling: detections form a Poisson process."""
    p = load_fixture("ddsi500_sim")
    r1 = replace(p.region1, fission_intensity=0.0, transfer_out_intensity=0.0, capture_intensity=0.4)
    r2 = replace(p.region2, transfer_out_intensity=0.0, capture_intensity=1.0)
    return replace(p, region1=r1, region2=r2, source=replace(p.source, strength=rate_source))
