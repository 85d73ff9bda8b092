"""Partial-reconstruction masked image modeling, desk scale."""

from . import costs, model, numerics, tokens, training

__version__ = "0.1.0"
__all__ = ["costs", "model", "numerics", "tokens", "training", "__version__"]
