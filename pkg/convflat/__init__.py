"""Exact Hessian trace and relative flatness of conv -> GAP -> softmax heads."""

__version__ = "0.1.0"
