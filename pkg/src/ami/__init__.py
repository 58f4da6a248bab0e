"""Adaptive multimodal sensing and inference on wearable time series."""

__version__ = "0.1.0"
