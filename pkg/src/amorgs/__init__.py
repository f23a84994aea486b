"""Amortized global search for parameterized nonlinear programs.

Curate local optima by multi-start, learn a conditional generative model of
the good ones, and warm-start a local solver at new parameter values.
"""

__version__ = "0.1.0"
