"""Adaptive CSMA scheduling: exact laws, simulators, optimizers and experiments."""

__version__ = "0.1.0"
