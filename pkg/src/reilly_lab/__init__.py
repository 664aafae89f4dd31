"""Numerical checks of Reilly-type eigenvalue bounds for the p-Laplacian."""

__version__ = "0.1.0"
