"""Transversal frame flows, periodic orbits and hyperbolicity checks for maps and flows."""

__version__ = "0.1.0"
