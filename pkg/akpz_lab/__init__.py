"""Numerical laboratory for AKPZ growth, dimer surface tension and complex Burgers shapes."""

__all__ = ["__version__"]
__version__ = "0.1.0"
