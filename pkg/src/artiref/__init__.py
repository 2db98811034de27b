"""Artificial reference pictures from a learned video predictor, and a block codec to test them."""

__version__ = "0.1.0"
