"""Numerical lab for finite-energy pluripotential theory on reduced Fano models."""
__version__ = "0.1.0"
