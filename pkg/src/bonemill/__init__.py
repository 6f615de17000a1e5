"""Simulation of vision-guided robotic cranial-window milling."""

__version__ = "0.1.0"
