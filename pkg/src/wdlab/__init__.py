"""Monte Carlo and quadrature laboratory for the Brownian directed polymer
behind the mollified stochastic heat equation in weak disorder."""

__version__ = "0.1.0"
