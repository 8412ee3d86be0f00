"""Numerical toolkit for PAC-Bayes bounds whose complexity term is controlled
through log-Sobolev inequalities, with a small numpy network library and an
experiment harness."""

__version__ = "0.1.0"
