"""facevoice: a cross-modal face/voice metric-learning laboratory."""

__version__ = "0.1.0"
