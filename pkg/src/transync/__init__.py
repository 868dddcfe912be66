"""Stochastic transit transfer-synchronization toolkit."""

__version__ = "0.1.0"
