"""Random-matrix laboratory for eigenvector overlap statistics.

Subpackages cover Wigner-type ensembles, spectral diagnostics, the
Dyson/Ornstein-Uhlenbeck flows, overlap observables built from
determinants, hafnians and permanents, the occupation-state moment flow
with exact rational arithmetic, anticommuting-variable calculus, and a
Monte Carlo verification suite with a command-line front end.
"""

__version__ = "0.1.0"
