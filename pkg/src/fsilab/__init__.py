"""Numerical laboratory for a boundary-dissipative fluid-structure
interaction system: Lagrangian incompressible fluid coupled to a
variable-coefficient elastic wave across a dissipative interface."""

__version__ = "0.1.0"
