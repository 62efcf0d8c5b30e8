"""Numerical laboratory for branching Brownian motion with a 1-periodic branching rate."""
