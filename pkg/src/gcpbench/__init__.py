"""GCP detection and sparse-ground-truth SLAM evaluation toolkit."""

__version__ = "0.1.0"
