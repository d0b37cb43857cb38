"""Polyharmonic spherical-basis-function quasi-interpolation on the sphere."""

__version__ = "0.1.0"
