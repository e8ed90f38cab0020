"""Pose-conditioned dynamic textures, textured-mesh rendering, and render-to-image refinement."""

__version__ = "0.1.0"
