"""Handover ping-pong detection and avoidance with sequence-model Time-of-Stay prediction."""

__version__ = "0.1.0"
