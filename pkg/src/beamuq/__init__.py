"""Multilevel Monte Carlo uncertainty quantification for plane-stress beams."""

__version__ = "0.1.0"
