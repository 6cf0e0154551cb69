"""Toolkit for constrained 3D shape generation and reduced-order surrogates."""

__version__ = "0.1.0"
