"""Feedback linearization of nonlinear differential-algebraic control systems."""

__version__ = "0.1.0"
