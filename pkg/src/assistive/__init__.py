"""Assistive and deceptive signals for image classifiers, in 2D and through a
differentiable texture renderer."""

__version__ = "0.1.0"
