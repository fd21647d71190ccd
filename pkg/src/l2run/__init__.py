"""Learning-to-Run techniques on a desk-scale symmetric runner."""

__version__ = "0.1.0"
