"""Numerical toolkit for CR geometry and Fefferman-type Lorentzian metrics."""

__version__ = "0.1.0"
