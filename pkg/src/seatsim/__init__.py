"""Seated human occupant multibody model under multi-axis seat vibration."""
__version__ = "0.1.0"
