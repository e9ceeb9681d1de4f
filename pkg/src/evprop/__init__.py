"""Rotor speed and relative state of a quadrotor from an overhead event camera."""

__version__ = "0.1.0"
