"""Stochastic-gradient Riemannian Langevin dynamics with pluggable metrics."""

__version__ = "0.1.0"
