"""Simulation-based composite likelihood for factorial hidden Markov models."""
__version__ = "0.1.0"
