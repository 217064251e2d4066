"""Quorum-verified biometric identity with a simulation and load harness."""

__version__ = "0.1.0"
