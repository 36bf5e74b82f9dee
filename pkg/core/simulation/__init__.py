"""Synthetic designs and the Monte Carlo harness."""
