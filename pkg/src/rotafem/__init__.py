"""Adaptive mixed finite elements for rotation-based elasticity, Biot
poroelasticity with total pressure, and their interface coupling."""

__version__ = "0.1.0"
