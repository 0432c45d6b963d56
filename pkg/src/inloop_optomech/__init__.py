"""Analytic model and stochastic simulator of an optomechanical cavity whose
drive is enclosed in an amplitude feedback loop."""

__version__ = "0.1.0"
