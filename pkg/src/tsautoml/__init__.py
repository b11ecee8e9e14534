"""Automated search over recurrent autoencoder pipelines for time-series
anomaly detection and clustering."""

__version__ = "0.1.0"
