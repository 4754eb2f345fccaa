"""Cost-sensitive acoustic event detection under a Neyman-Pearson constraint."""

__version__ = "0.1.0"
