"""Desk-scale emulator of an analog-mode Rydberg atom array processor."""

__version__ = "0.1.0"
