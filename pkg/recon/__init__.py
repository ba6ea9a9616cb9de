"""Coefficient identification for elliptic problems from Cauchy data."""

__version__ = '1.0'
