"""Radar odometry with self-supervised alignment terms and gaussian-splat mapping."""

__version__ = "0.1.0"
