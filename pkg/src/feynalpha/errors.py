"""Exception hierarchy shared by all feynalpha modules."""


class FeynmanAlphaError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(FeynmanAlphaError):
    """Parameter set fails validation; ``report`` carries the details."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.violations) or "invalid parameters")


class ConfigError(FeynmanAlphaError):
    """Malformed configuration document (unknown keys, bad types)."""


class NonPositiveRoot(FeynmanAlphaError):
    """A root of the characteristic polynomial is not strictly positive."""


class DegenerateRoots(FeynmanAlphaError):
    """The two decay constants coincide; closed forms dividing by their gap fail."""


class StiffnessFailure(FeynmanAlphaError):
    """ODE integration exceeded its right-hand-side evaluation cap."""


class ToleranceNotMet(FeynmanAlphaError):
    """ODE integrator reported failure to reach the requested tolerance."""


class PopulationCapExceeded(FeynmanAlphaError):
    """Simulated neutron population grew past ``max_population``."""


class PmfMissing(FeynmanAlphaError):
    """Simulation needs explicit multiplicity distributions."""


class EmptyTrain(FeynmanAlphaError):
    """Detection train contains no events."""


class GateTooLong(FeynmanAlphaError):
    """Gate width leaves fewer than two complete gates in the record."""


class BalanceViolation(FeynmanAlphaError):
    """Tally table breaks neutron conservation."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class NotConverged(FeynmanAlphaError):
    """Iterative fit stopped without meeting its convergence criterion."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class DegenerateFit(FeynmanAlphaError):
    """Two-exponential fit cannot separate the exponents."""

    def __init__(self, message, fit=None):
        self.fit = fit
        super().__init__(message)


class ReplicaErrors(FeynmanAlphaError):
    """One or more ensemble replicas failed; ``errors`` maps index to exception."""

    def __init__(self, errors):
        self.errors = dict(errors)
        detail = ", ".join(f"replica {i}: {e}" for i, e in sorted(self.errors.items()))
        super().__init__(detail)
