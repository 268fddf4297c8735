"""Compiler, scheduler and simulator for crossbar-controlled qubit grids."""

__version__ = "0.1.0"
