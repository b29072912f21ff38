"""Lax-Oleinik laboratory for the randomly kicked Burgers equation on the circle."""

__version__ = "0.1.0"
