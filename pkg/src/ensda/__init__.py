"""Offline ensemble data assimilation: EnKF (ETKF, DEnKF) and EnOI with local
analysis on layered rectangular grids, run as prep, calc and update stages."""

__version__ = "0.1.0"
