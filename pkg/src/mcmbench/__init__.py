"""Simulation and SPAM-robust benchmarking of noisy mid-circuit measurements."""

__version__ = "0.1.0"
