"""Probabilistic decomposition of performance states into response patterns."""

__version__ = "0.1.0"
