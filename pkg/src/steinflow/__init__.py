"""Stein variational gradient descent in function space for PDE inverse problems."""
__version__ = "0.1.0"
