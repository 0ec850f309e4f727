"""Decode visual search targets from simulated gaze: gaze-pooled encoder plus conditional VAE."""

__version__ = "0.1.0"
