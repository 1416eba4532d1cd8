"""Simulation of two mechanical oscillators coupled through a driven optical cavity."""

__version__ = "0.1.0"
