"""Two-region Feynman-alpha theory, exact branching simulation and estimation."""

__version__ = "0.1.0"
