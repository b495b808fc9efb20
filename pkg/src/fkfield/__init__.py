"""Monte Carlo laboratory for the critical 2D Ising magnetization field.

Subpackages cover lattice geometry, FK/Potts cluster samplers with exact
desk-scale oracles, cluster decomposition and interface loops, the rescaled
magnetization field and its cutoff variants, statistics (Wasserstein-2,
power-law fits, resampling errors), the near-critical ghost-field model,
and a CLI experiment runner.
"""

__version__ = "0.1.0"
