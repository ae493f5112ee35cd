"""Zeroth-order algorithms for structured polynomial bandits, with baselines and a seeded experiment harness."""
__version__ = "0.1.0"
