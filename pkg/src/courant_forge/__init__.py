"""Computation and verification kernel for generalized geometry on charts.

Builds Courant brackets, generalized metrics, canonical connections, Dirac
and 2-nilpotent structures from user-supplied coefficient expressions and
verifies their defining identities numerically at sample points.
"""
from __future__ import annotations

__version__ = "0.1.0"
