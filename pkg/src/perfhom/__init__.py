"""Numerical homogenization of periodic eigenproblems with sign-changing density on perforated domains."""

__version__ = "0.1.0"
