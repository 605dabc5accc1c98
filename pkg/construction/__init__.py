"""Numerical convex-integration engine for the stochastic transport equation on the torus."""
