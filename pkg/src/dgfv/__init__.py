"""Subcell monolithic DG/FV solver for hyperbolic conservation laws."""

__version__ = "0.1.0"
