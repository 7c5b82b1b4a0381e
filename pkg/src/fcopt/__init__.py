"""Primal-dual and proximal-point solvers for functionally constrained problems."""
__version__ = "0.1.0"
