"""Numerical laboratory for moderately interacting particle ensembles
coupled to signal-dependent diffusion fields on a periodic box.

The package simulates three synchronously coupled systems (pairwise
interacting, mean-field, and limit), the density and signal fields they
ride on, and the statistics that quantify how the systems approach one
another as the particle count grows.
"""

__version__ = "0.1.0"
