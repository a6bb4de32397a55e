"""Monte Carlo toolkit for local spectral statistics of random lattice Hamiltonians."""

__version__ = "0.1.0"
