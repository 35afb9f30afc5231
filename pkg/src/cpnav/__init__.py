"""Collision-inclusive quadrotor navigation simulator and planner benchmark."""

__version__ = "0.1.0"
