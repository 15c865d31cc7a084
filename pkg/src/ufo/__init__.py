"""Flow-based robust continual learning on graphs with noisy labels."""

__version__ = "0.1.0"
