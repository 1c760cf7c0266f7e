"""Quadrotor navigation sandbox with geodesic reward shaping and a HOCBF safety shield."""

__version__ = "0.1.0"
