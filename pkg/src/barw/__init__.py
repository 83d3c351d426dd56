"""Branching annihilating random walk simulator and verification workbench."""

__version__ = "0.1.0"
