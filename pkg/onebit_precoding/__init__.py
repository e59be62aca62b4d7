"""Nonlinear 1-bit precoding for massive MU-MIMO downlink, with baselines and a Monte Carlo harness."""

__version__ = "0.1.0"
