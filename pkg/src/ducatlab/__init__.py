"""Desk-scale adversarial training with dummy classes (DUCAT) and a PGD-AT baseline."""

__version__ = "0.1.0"
