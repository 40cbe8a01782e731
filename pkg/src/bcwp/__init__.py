"""Curvature of base-conformal warped products and the constant scalar curvature problem."""

__version__ = "0.1.0"
