"""Learnable elementary structures for 3D shape reconstruction and matching."""

__version__ = "0.1.0"
