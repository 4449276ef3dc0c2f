"""
Configuration package for the extrapolation certificate toolkit.

This package provides the numerical defaults shared by every certificate.
"""

__version__ = "1.0.0"
