"""Cluster geometry, phase-space partitions and scattering diagnostics for N-body systems."""

__version__ = "0.1.0"
