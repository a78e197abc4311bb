"""Monte Carlo and analytic tools for actively time-multiplexed heralded photon sources."""

__version__ = "0.1.0"
