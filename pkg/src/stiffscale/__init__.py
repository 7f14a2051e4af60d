"""Surrogate modelling toolkit for stiff reaction kinetics with Box-Cox label scaling."""

__version__ = "0.1.0"
