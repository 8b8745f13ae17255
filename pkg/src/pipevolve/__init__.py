"""Evolve image style-transfer pipelines with NSGA-II."""

__version__ = "0.1.0"
