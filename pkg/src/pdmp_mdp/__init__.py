"""Simulation and control of piecewise-deterministic Markov processes."""
