"""Numerical laboratory for u_tt - Lap u + (t+1)^(-beta) u_t = |u|^p.

Damping auxiliaries, heat-kernel quadrature, a spectral PDE solver with
blow-up detection, lifespan sweeps and scaling fits, the heat-kernel
identity check and the comparison ODEs.
"""

__version__ = "0.1.0"
