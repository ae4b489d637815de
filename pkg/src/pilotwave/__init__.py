"""Pilot-wave (de Broglie-Bohm) simulation on periodic grids.

Wave functions are propagated on power-of-two grids, configurations are moved
along the guiding field, and the statistical claims of the theory (equivariance,
Born statistics, emergent collapse, conditional wave functions) are checked
numerically.  Units are naturalized: hbar = 1 and mu = m / hbar per axis.
"""

__version__ = "0.1.0"
