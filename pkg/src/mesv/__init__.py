"""Multi-enrollment speaker verification: attention back-end and joint training."""

__version__ = "0.1.0"
