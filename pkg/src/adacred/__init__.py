"""Adaptive spatial/temporal token crediting for offline RL sequence models."""

__version__ = "0.1.0"
