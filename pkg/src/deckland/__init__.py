"""Trajectory generation and closed-loop simulation for landing a multirotor on a moving vessel."""

__version__ = "0.1.0"
