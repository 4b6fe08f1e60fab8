"""Reflecting stochastic flows in a half-space and their derivative in the initial point."""
