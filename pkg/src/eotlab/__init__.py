"""Numerical laboratory for a block-model entropic optimal transport counterexample."""

__version__ = "0.1.0"
