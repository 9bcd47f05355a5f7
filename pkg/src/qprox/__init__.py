"""Strongly quasar-convex robust losses and an inexact high-order proximal-point method."""

from .errors import QproxError

__version__ = "0.1.0"
