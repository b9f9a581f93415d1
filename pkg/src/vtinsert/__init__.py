"""Visuotactile peg-in-socket insertion: simulator, policies, distillation, eval."""

__version__ = "0.1.0"
