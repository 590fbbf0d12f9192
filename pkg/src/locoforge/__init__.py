"""Constrained PPO with curriculum resets for a planar wheel-legged robot arm."""

__version__ = "0.1.0"
